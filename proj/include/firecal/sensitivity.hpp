#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "firecal/error.hpp"
#include "firecal/pce.hpp"
#include "firecal/surrogate.hpp"

namespace firecal::sensitivity {

/// Total Sobol' indices of a scalar model.
struct ScalarIndices {
  std::vector<double> total;  // one per input
  double variance = 0.0;
};

/// Per-time total indices; NaN marks times where the output variance vanishes.
struct TimeSeriesIndices {
  Eigen::MatrixXd total;     // inputs x outputs
  Eigen::VectorXd variance;  // per output
};

/// S_i = Σ_{α: α_i > 0} a_α² / Σ_{α ≠ 0} a_α².
inline ScalarIndices total_sobol_scalar(const pce::PceFit& fit) {
  ScalarIndices r;
  r.variance = fit.variance();
  if (!(r.variance > 0.0)) throw DomainError("Sobol' indices undefined: the expansion has zero variance");
  r.total.assign(fit.basis.dim, 0.0);
  for (std::size_t j = 0; j < fit.basis.size(); ++j) {
    const double a2 = fit.coefficients[static_cast<Eigen::Index>(j)] * fit.coefficients[static_cast<Eigen::Index>(j)];
    for (std::size_t i = 0; i < fit.basis.dim; ++i)
      if (fit.basis.indices[j][i] > 0) r.total[i] += a2;
  }
  for (auto& s : r.total) s /= r.variance;
  return r;
}

/// Relative cutoff below which a per-time variance counts as zero.
inline constexpr double kVarianceFloor = 1e-12;

/// Time-dependent indices of the PCA+PCE surrogate. The coefficients of the
/// output at time t are c_t = A φ_tᵀ; the index is the share of Σ_{α≠0} c_{t,α}²
/// carried by multi-indices with α_i > 0.
inline TimeSeriesIndices total_sobol_timeseries(const surrogate::SurrogateModel& m) {
  const auto n = m.n_outputs();
  const auto dim = static_cast<Eigen::Index>(m.n_inputs());
  TimeSeriesIndices r;
  r.total = Eigen::MatrixXd::Zero(dim, n);
  r.variance = Eigen::VectorXd::Zero(n);
  if (m.n_components() > 0) {
    const Eigen::MatrixXd c = m.coefficients * m.pca.components.transpose();  // |A| x N
    for (std::size_t j = 0; j < m.basis.size(); ++j) {
      const auto& alpha = m.basis.indices[j];
      if (pce::total_degree(alpha) == 0) continue;
      const Eigen::RowVectorXd c2 = c.row(static_cast<Eigen::Index>(j)).array().square();
      r.variance += c2.transpose();
      for (Eigen::Index i = 0; i < dim; ++i)
        if (alpha[static_cast<std::size_t>(i)] > 0) r.total.row(i) += c2;
    }
  }
  const double cutoff = kVarianceFloor * (n > 0 ? r.variance.maxCoeff() : 0.0);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (r.variance[t] > cutoff && r.variance[t] > 0.0)
      r.total.col(t) /= r.variance[t];
    else
      r.total.col(t).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

}  // namespace firecal::sensitivity
