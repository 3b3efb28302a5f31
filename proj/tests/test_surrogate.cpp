#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "firecal/surrogate.hpp"

using namespace firecal;
using namespace firecal::surrogate;

namespace {

pce::InputTransform box3() { return {{0.0, -1.0, 10.0}, {1.0, 1.0, 20.0}}; }

// Outputs on a rank-2 subspace, scores quadratic in the inputs.
Eigen::VectorXd quadratic_rank2(std::span<const double> x) {
  const double g1 = 1.0 + x[0] * x[1] + 0.3 * x[2];
  const double g2 = x[0] * x[0] - 0.02 * x[2] * x[1];
  Eigen::VectorXd y(20);
  for (Eigen::Index t = 0; t < 20; ++t) y[t] = 5.0 + std::sin(0.3 * t) * g1 + std::cos(0.7 * t) * g2;
  return y;
}

// Smooth, non-polynomial vector model for convergence checks.
Eigen::VectorXd smooth_model(std::span<const double> x) {
  Eigen::VectorXd y(30);
  for (Eigen::Index t = 0; t < 30; ++t) {
    const double s = 0.1 * static_cast<double>(t);
    y[t] = std::exp(-s * (0.5 + x[0])) * (1.0 + 0.3 * std::sin(3.0 * x[1] + s)) + 0.01 * x[2] * s;
  }
  return y;
}

ExperimentalDesign evaluated(const pce::InputTransform& box, std::size_t k, std::uint64_t seed,
                             const ForwardModel& f) {
  auto d = build_design(box, k, seed);
  evaluate_design(d, f);
  return d;
}

}  // namespace

TEST(BuildDesign, LatinHypercubeMarginals) {
  pce::InputTransform box{{300, 0.1, 0.1, 0.1, 1.4e4, 1e3}, {800, 1, 0.25, 1.2, 6.5e4, 8e4}};
  const auto d = build_design(box, 1000, 42);
  ASSERT_EQ(d.points.rows(), 1000);
  ASSERT_EQ(d.points.cols(), 6);
  // χ² statistic over 20 equal bins per column against the 1 % critical value
  // for 19 degrees of freedom.
  for (Eigen::Index j = 0; j < 6; ++j) {
    std::vector<int> counts(20, 0);
    for (Eigen::Index i = 0; i < 1000; ++i) {
      const double u = (d.points(i, j) - box.lower[static_cast<std::size_t>(j)]) /
                       (box.upper[static_cast<std::size_t>(j)] - box.lower[static_cast<std::size_t>(j)]);
      ASSERT_GE(u, 0.0);
      ASSERT_LE(u, 1.0);
      ++counts[static_cast<std::size_t>(std::min(19, static_cast<int>(u * 20)))];
    }
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - 50.0) * (c - 50.0) / 50.0;
    EXPECT_LT(chi2, 36.19);
  }
}

TEST(BuildDesign, SinglePointAndDeterminism) {
  const auto box = box3();
  const auto one = build_design(box, 1, 3);
  ASSERT_EQ(one.points.rows(), 1);
  EXPECT_TRUE(box.contains(std::vector<double>{one.points(0, 0), one.points(0, 1), one.points(0, 2)}));
  EXPECT_EQ(build_design(box, 50, 7).points, build_design(box, 50, 7).points);
  EXPECT_NE(build_design(box, 50, 7).points, build_design(box, 50, 8).points);
  EXPECT_THROW(build_design(box, 0, 1), DomainError);
}

TEST(EvaluateDesign, RowsEqualDirectCalls) {
  auto d = build_design(box3(), 40, 1);
  evaluate_design(d, smooth_model, 3);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const std::vector<double> x{d.points(i, 0), d.points(i, 1), d.points(i, 2)};
    const Eigen::VectorXd direct = smooth_model(x);
    for (Eigen::Index t = 0; t < direct.size(); ++t) EXPECT_EQ(d.responses(i, t), direct[t]);
  }
  auto serial = build_design(box3(), 40, 1);
  evaluate_design(serial, smooth_model, 1);
  EXPECT_EQ(serial.responses, d.responses);
}

TEST(EvaluateDesign, FailureNamesPoint) {
  auto d = build_design(box3(), 10, 2);
  const double bad = d.points(6, 0);
  const ForwardModel f = [&](std::span<const double> x) -> Eigen::VectorXd {
    if (x[0] == bad) throw SolverError(17, 0.5, "no convergence");
    return smooth_model(x);
  };
  try {
    evaluate_design(d, f, 2);
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("design point 6"), std::string::npos);
    EXPECT_EQ(e.step(), 17u);
  }
  EXPECT_FALSE(d.evaluated());
}

TEST(Train, ExactQuadraticRankTwo) {
  const auto box = box3();
  const auto d = evaluated(box, 60, 4, quadratic_rank2);
  const auto m = train(d, box, {0.01, 2, 4});
  EXPECT_EQ(m.n_components(), 2);
  for (double loo : m.loo_relative) EXPECT_LE(loo, 1e-12);
  EXPECT_LE(m.eta, 1e-10);
  EXPECT_EQ(m.coefficients.rows(), static_cast<Eigen::Index>(m.basis.size()));
  EXPECT_EQ(m.coefficients.cols(), 2);
}

TEST(Train, FullRankExactExpansionHasZeroError) {
  const auto box = box3();
  const ForwardModel f = [](std::span<const double> x) {
    Eigen::VectorXd y(3);
    y << x[0] * x[1], x[2] + x[0], x[1] * x[1] - x[2] * x[0];
    return y;
  };
  const auto d = evaluated(box, 50, 5, f);
  const auto m = train(d, box, {0.0, 2, 3});
  EXPECT_EQ(m.n_components(), 3);
  EXPECT_NEAR(error_estimate(m), 0.0, 1e-12);
}

TEST(Train, TooFewPoints) {
  const auto box = box3();
  const auto d = evaluated(box, 20, 6, smooth_model);
  EXPECT_THROW(train(d, box, {0.01, 6, 6}), FitError);
}

TEST(Train, ColumnsReproduceComponentFits) {
  const auto box = box3();
  const auto d = evaluated(box, 120, 7, smooth_model);
  const auto m = train(d, box, {0.001, 2, 5});
  ASSERT_GT(m.n_components(), 1);
  const Eigen::MatrixXd centered = d.responses.rowwise() - m.pca.mean.transpose();
  const Eigen::MatrixXd scores = centered * m.pca.components;
  for (Eigen::Index p = 0; p < m.n_components(); ++p) {
    const auto deg = m.degrees[static_cast<std::size_t>(p)];
    const auto f = pce::fit(d.points, scores.col(p), pce::build_total_degree_basis(3, deg), box);
    for (std::size_t j = 0; j < m.basis.size(); ++j) {
      const double expect = j < f.basis.size() ? f.coefficients[static_cast<Eigen::Index>(j)] : 0.0;
      EXPECT_EQ(m.coefficients(static_cast<Eigen::Index>(j), p), expect);
    }
    EXPECT_EQ(m.loo_absolute[static_cast<std::size_t>(p)], f.loo_absolute);
  }
  // η̃ from its definition.
  double e_pce = 0.0;
  for (double v : m.loo_absolute) e_pce += v;
  const double s = std::sqrt(m.pca.discarded) + std::sqrt(e_pce);
  EXPECT_DOUBLE_EQ(m.eta, s * s / m.pca.eigenvalues.sum());
  EXPECT_GE(m.eta, 0.0);
}

TEST(Predict, TrainingReplayAndForms) {
  const auto box = box3();
  const auto d = evaluated(box, 150, 8, smooth_model);
  const auto m = train(d, box, {0.001, 2, 5});
  const double trace = m.pca.total_variance();
  double mse = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const std::vector<double> x{d.points(i, 0), d.points(i, 1), d.points(i, 2)};
    const Eigen::VectorXd y = predict(m, x);
    mse += (y - d.responses.row(i).transpose()).squaredNorm();
    EXPECT_LT((predict_componentwise(m, x) - y).cwiseAbs().maxCoeff(), 1e-10);
  }
  mse /= static_cast<double>(d.size());
  EXPECT_LE(mse / trace, m.eta);
  EXPECT_THROW(predict(m, std::vector<double>{2.0, 0.0, 15.0}), DomainError);
  EXPECT_THROW(predict(m, std::vector<double>{0.5, 0.0}), DomainError);
}

TEST(Predict, ConstantResponses) {
  const auto box = box3();
  const ForwardModel f = [](std::span<const double>) { return Eigen::VectorXd::Constant(7, 19.5); };
  const auto d = evaluated(box, 30, 9, f);
  const auto m = train(d, box);
  EXPECT_EQ(m.n_components(), 0);
  EXPECT_EQ(m.eta, 0.0);
  const Eigen::VectorXd y = predict(m, std::vector<double>{0.5, 0.0, 15.0});
  for (Eigen::Index t = 0; t < 7; ++t) EXPECT_EQ(y[t], 19.5);
}

TEST(Predict, HoldoutErrorWithinEstimate) {
  const auto box = box3();
  const auto d = evaluated(box, 200, 10, smooth_model);
  const auto m = train(d, box, {0.001, 2, 6});
  const auto hold = evaluated(box, 100, 11, smooth_model);
  double mse = 0.0;
  for (Eigen::Index i = 0; i < hold.size(); ++i) {
    const std::vector<double> x{hold.points(i, 0), hold.points(i, 1), hold.points(i, 2)};
    mse += (predict(m, x) - hold.responses.row(i).transpose()).squaredNorm();
  }
  mse /= static_cast<double>(hold.size());
  EXPECT_LE(mse / m.pca.total_variance(), 3.0 * m.eta);
}

// Averaged over seeds, η̃ does not grow as the design grows.
TEST(ErrorEstimate, DecreasesWithDesignSize) {
  const auto box = box3();
  std::vector<double> mean_eta;
  for (std::size_t k : {125, 250, 500, 1000}) {
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
      sum += train(evaluated(box, k, seed, smooth_model), box, {0.001, 2, 6}).eta;
    mean_eta.push_back(sum / 10.0);
  }
  for (std::size_t i = 1; i < mean_eta.size(); ++i) EXPECT_LE(mean_eta[i], mean_eta[i - 1]) << i;
}

TEST(Serialization, RoundTripIsBitwise) {
  const auto box = box3();
  const auto d = evaluated(box, 120, 12, smooth_model);
  const auto m = train(d, box, {0.001, 2, 5}, {2, 15, 10.0});
  std::stringstream ss;
  save(m, ss);
  const auto back = load(ss);
  EXPECT_EQ(back.layout.n_sensors, 2u);
  EXPECT_EQ(back.layout.n_steps, 15u);
  EXPECT_EQ(back.eta, m.eta);
  EXPECT_EQ(back.basis.indices, m.basis.indices);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const std::vector<double> x{d.points(i, 0), d.points(i, 1), d.points(i, 2)};
    EXPECT_EQ(predict(back, x), predict(m, x));
  }
  std::stringstream again;
  save(back, again);
  EXPECT_EQ(again.str(), [&] {
    std::stringstream s;
    save(m, s);
    return s.str();
  }());
}

TEST(Serialization, RejectsForeignData) {
  std::stringstream ss("not a model");
  EXPECT_THROW(load(ss), ConfigError);
  const auto box = box3();
  const auto m = train(evaluated(box, 60, 13, smooth_model), box);
  std::stringstream full;
  save(m, full);
  std::stringstream cut(full.str().substr(0, full.str().size() / 2));
  EXPECT_THROW(load(cut), ConfigError);
}
