#include <gtest/gtest.h>

#include <random>

#include "firecal/pca.hpp"

using namespace firecal;
using namespace firecal::pca;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Rows on a rank-r affine subspace of R^n with well separated variances.
Eigen::MatrixXd low_rank(Eigen::Index k, Eigen::Index n, Eigen::Index r, std::uint64_t seed) {
  Eigen::MatrixXd scores = random_matrix(k, r, seed);
  for (Eigen::Index j = 0; j < r; ++j) scores.col(j) *= std::pow(0.5, static_cast<double>(j));
  const Eigen::MatrixXd dirs = random_matrix(r, n, seed + 1);
  const Eigen::RowVectorXd offset = random_matrix(1, n, seed + 2);
  return (scores * dirs).rowwise() + offset;
}

}  // namespace

TEST(FitPca, ExactLowRank) {
  const auto y = low_rank(200, 40, 3, 1);
  const auto m = fit_pca(y, 0.01);
  EXPECT_EQ(m.n_retained, 3);
  EXPECT_LE(reconstruction_error(m, y), 1e-10);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Eigen::VectorXd yi = y.row(i).transpose();
    EXPECT_LT((reconstruct(m, project(m, yi)) - yi).norm(), 1e-9);
  }
}

TEST(FitPca, IdenticalRows) {
  Eigen::MatrixXd y(10, 5);
  for (Eigen::Index i = 0; i < 10; ++i) y.row(i) << 1, 2, 3, 4, 5;
  const auto m = fit_pca(y, 0.01);
  EXPECT_EQ(m.n_retained, 0);
  EXPECT_EQ(m.eigenvalues.cwiseAbs().maxCoeff(), 0.0);
  const Eigen::VectorXd rec = reconstruct(m, Eigen::VectorXd(0));
  EXPECT_EQ(rec, y.row(0).transpose());
}

TEST(FitPca, TraceIdentityAndOrdering) {
  const auto y = random_matrix(50, 12, 3);
  const auto m = fit_pca(y, 0.01);
  const Eigen::MatrixXd c = y.rowwise() - y.colwise().mean();
  const double trace = (c.transpose() * c).trace() / 49.0;
  EXPECT_NEAR(m.total_variance(), trace, 1e-8 * trace);
  for (Eigen::Index p = 1; p < m.eigenvalues.size(); ++p) EXPECT_GE(m.eigenvalues[p - 1], m.eigenvalues[p]);
  const Eigen::MatrixXd gram = m.components.transpose() * m.components;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitPca, TruncationRule) {
  const auto y = random_matrix(80, 20, 4);
  for (double eps : {0.0, 0.01, 0.1, 0.5}) {
    const auto m = fit_pca(y, eps);
    const double total = m.total_variance();
    const double kept = m.eigenvalues.head(m.n_retained).sum();
    EXPECT_GE(kept, (1.0 - eps) * total * (1.0 - 1e-12));
    if (m.n_retained > 0) {
      EXPECT_LT(kept - m.eigenvalues[m.n_retained - 1], (1.0 - eps) * total);
    }
    EXPECT_NEAR(m.discarded, total - kept, 1e-9 * total);
  }
}

// Training-set reconstruction error normalized like the covariance equals the
// discarded eigenvalue sum.
TEST(FitPca, ReconstructionErrorEqualsDiscardedVariance) {
  const auto y = random_matrix(60, 15, 5);
  const auto m = fit_pca(y, 0.2);
  ASSERT_LT(m.n_retained, 15);
  EXPECT_NEAR(reconstruction_error(m, y), m.discarded, 1e-9);
  EXPECT_LE(reconstruction_error(m, y), 0.2 * m.total_variance() + 1e-9);
}

TEST(Project, MeanAndPrincipalDirection) {
  const auto y = low_rank(100, 10, 3, 6);
  const auto m = fit_pca(y, 0.0001);
  EXPECT_LT(project(m, m.mean).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd z = project(m, m.mean + 2.0 * m.components.col(0));
  EXPECT_NEAR(z[0], 2.0, 1e-12);
  for (Eigen::Index p = 1; p < z.size(); ++p) EXPECT_NEAR(z[p], 0.0, 1e-12);
  EXPECT_THROW(project(m, Eigen::VectorXd::Zero(3)), DomainError);
  EXPECT_THROW(reconstruct(m, Eigen::VectorXd::Zero(m.n_retained + 1)), DomainError);
}

TEST(Project, RoundTripOnRetainedSpan) {
  const auto y = random_matrix(40, 8, 7);
  const auto m = fit_pca(y, 0.05);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd z(m.n_retained);
    for (Eigen::Index p = 0; p < z.size(); ++p) z[p] = n(rng);
    EXPECT_LT((project(m, reconstruct(m, z)) - z).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(FitPca, SignConvention) {
  const auto y = random_matrix(30, 6, 9);
  const auto a = fit_pca(y, 0.0);
  const auto b = fit_pca(-y, 0.0);
  for (Eigen::Index p = 0; p < a.n_retained; ++p) {
    Eigen::Index arg;
    a.components.col(p).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(a.components(arg, p), 0.0);
    b.components.col(p).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(b.components(arg, p), 0.0);
  }
  EXPECT_THROW(fit_pca(y.topRows(1), 0.01), DomainError);
}
