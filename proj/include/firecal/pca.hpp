#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "firecal/error.hpp"

namespace firecal::pca {

/// Principal components of a K x N response matrix.
struct PcaModel {
  Eigen::VectorXd mean;         ///< column means μ_Y (length N)
  Eigen::MatrixXd components;   ///< retained eigenvectors as columns (N x N')
  Eigen::VectorXd eigenvalues;  ///< all covariance eigenvalues, descending
  Eigen::Index n_retained = 0;
  double discarded = 0.0;       ///< Σ_{p>N'} λ_p

  Eigen::Index dim() const { return mean.size(); }
  double total_variance() const { return eigenvalues.sum(); }
};

/// PCA by SVD of the centered data with 1/(K-1) covariance normalization.
/// Keeps the smallest number of components whose eigenvalues sum to at least
/// (1 - epsilon0) of the total. Each eigenvector is signed so that its
/// largest-magnitude entry is positive.
inline PcaModel fit_pca(const Eigen::MatrixXd& responses, double epsilon0) {
  const auto k = responses.rows();
  if (k < 2) throw DomainError("fit_pca needs at least two rows");
  if (!(epsilon0 >= 0.0 && epsilon0 < 1.0)) throw DomainError("epsilon0 must lie in [0, 1)");
  PcaModel m;
  m.mean = responses.colwise().mean().transpose();
  const Eigen::MatrixXd centered = responses.rowwise() - m.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  m.eigenvalues = s.array().square() / static_cast<double>(k - 1);

  const double total = m.eigenvalues.sum();
  Eigen::Index keep = 0;
  if (total > 0.0) {
    const double target = (1.0 - epsilon0) * total;
    double acc = 0.0;
    while (keep < m.eigenvalues.size() && acc < target) acc += m.eigenvalues[keep++];
  }
  m.n_retained = keep;
  m.discarded = m.eigenvalues.tail(m.eigenvalues.size() - keep).sum();
  m.components = svd.matrixV().leftCols(keep);
  for (Eigen::Index p = 0; p < keep; ++p) {
    Eigen::Index arg = 0;
    m.components.col(p).cwiseAbs().maxCoeff(&arg);
    if (m.components(arg, p) < 0.0) m.components.col(p) *= -1.0;
  }
  return m;
}

/// Scores z_p = φ_pᵀ(y - μ) of the retained components.
inline Eigen::VectorXd project(const PcaModel& m, const Eigen::VectorXd& y) {
  if (y.size() != m.dim()) throw DomainError("project: length mismatch");
  return m.components.transpose() * (y - m.mean);
}

/// μ + Σ_p z_p φ_p over the retained components.
inline Eigen::VectorXd reconstruct(const PcaModel& m, const Eigen::VectorXd& z) {
  if (z.size() != m.n_retained) throw DomainError("reconstruct: score count mismatch");
  return m.mean + m.components * z;
}

/// Training-set reconstruction error, Σ_k ||y_k - reconstruct(project(y_k))||² / (K-1).
/// With the same normalization as the covariance this equals the discarded
/// eigenvalue sum.
inline double reconstruction_error(const PcaModel& m, const Eigen::MatrixXd& responses) {
  const Eigen::MatrixXd centered = responses.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd resid = centered - (centered * m.components) * m.components.transpose();
  return resid.squaredNorm() / static_cast<double>(responses.rows() - 1);
}

}  // namespace firecal::pca
