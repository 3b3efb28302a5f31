#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "firecal/error.hpp"

namespace firecal::pce {

/// Degrees of one multivariate basis polynomial, one entry per input.
using MultiIndex = std::vector<int>;

/// Truncation set of a polynomial chaos expansion.
struct MultiIndexSet {
  std::size_t dim = 0;
  std::vector<MultiIndex> indices;

  std::size_t size() const { return indices.size(); }

  int max_degree() const {
    int d = 0;
    for (const auto& a : indices)
      for (int k : a) d = std::max(d, k);
    return d;
  }

  /// Position of `alpha`, or size() when absent.
  std::size_t find(const MultiIndex& alpha) const {
    return static_cast<std::size_t>(std::find(indices.begin(), indices.end(), alpha) - indices.begin());
  }
};

inline int total_degree(const MultiIndex& a) {
  int s = 0;
  for (int k : a) s += k;
  return s;
}

/// Legendre polynomial of degree n scaled to unit norm under the uniform
/// density on [-1, 1]: sqrt(2n+1)·P_n(x).
inline double legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  if (n == 0) return 1.0;
  for (int k = 1; k < n; ++k) {
    const double p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return std::sqrt(2.0 * n + 1.0) * p1;
}

/// Values of the orthonormal Legendre polynomials 0..max_degree at x.
inline void legendre_table(int max_degree, double x, std::span<double> out) {
  double p0 = 1.0, p1 = x;
  out[0] = 1.0;
  if (max_degree >= 1) out[1] = std::sqrt(3.0) * x;
  for (int k = 1; k < max_degree; ++k) {
    const double p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
    p0 = p1;
    p1 = p2;
    out[k + 1] = std::sqrt(2.0 * k + 3.0) * p2;
  }
}

inline constexpr double kHypercubeTolerance = 1e-12;

/// Multivariate basis polynomial at a point of [-1, 1]^M.
inline double basis_eval(const MultiIndex& alpha, std::span<const double> u) {
  if (alpha.size() != u.size()) throw DomainError("basis_eval: dimension mismatch");
  double v = 1.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) > 1.0 + kHypercubeTolerance) throw DomainError("basis_eval: point outside [-1, 1]^M");
    v *= legendre(alpha[i], u[i]);
  }
  return v;
}

namespace detail {

inline void enumerate(std::size_t dim, int remaining, std::size_t pos, MultiIndex& cur,
                      std::vector<MultiIndex>& out) {
  if (pos + 1 == dim) {
    cur[pos] = remaining;
    out.push_back(cur);
    return;
  }
  for (int k = remaining; k >= 0; --k) {
    cur[pos] = k;
    enumerate(dim, remaining - k, pos + 1, cur, out);
  }
  cur[pos] = 0;
}

}  // namespace detail

/// All multi-indices of total degree <= p, ordered by total degree and then
/// with higher degree in earlier inputs first: (0,0), (1,0), (0,1), (2,0), ...
inline MultiIndexSet build_total_degree_basis(std::size_t dim, int p) {
  if (dim < 1 || p < 0) throw DomainError("total-degree basis needs dim >= 1 and p >= 0");
  MultiIndexSet set{dim, {}};
  MultiIndex cur(dim, 0);
  for (int d = 0; d <= p; ++d) detail::enumerate(dim, d, 0, cur, set.indices);
  return set;
}

/// binom(dim + p, p), the size of the total-degree basis.
inline std::size_t total_degree_size(std::size_t dim, int p) {
  double c = 1.0;
  for (int k = 1; k <= p; ++k) c = c * static_cast<double>(dim + static_cast<std::size_t>(k)) / k;
  return static_cast<std::size_t>(std::llround(c));
}

/// Per-dimension affine map of a box onto [-1, 1]^M.
struct InputTransform {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }

  bool contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < dim(); ++i) {
      const double slack = kHypercubeTolerance * std::max(1.0, std::abs(upper[i] - lower[i]));
      if (!(x[i] >= lower[i] - slack && x[i] <= upper[i] + slack)) return false;
    }
    return true;
  }

  void to_unit(std::span<const double> x, std::span<double> u) const {
    for (std::size_t i = 0; i < dim(); ++i) {
      const double w = upper[i] - lower[i];
      u[i] = w > 0.0 ? 2.0 * (x[i] - lower[i]) / w - 1.0 : 0.0;
    }
  }

  std::vector<double> to_unit(std::span<const double> x) const {
    std::vector<double> u(dim());
    to_unit(x, u);
    return u;
  }

  static InputTransform unit(std::size_t dim) {
    return {std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)};
  }
};

/// Evaluates all basis polynomials at one point given in hypercube coordinates.
/// `scratch` must hold dim·(max_degree+1) values.
inline void eval_basis_row(const MultiIndexSet& basis, int max_degree, std::span<const double> u,
                           std::span<double> scratch, std::span<double> row) {
  const std::size_t stride = static_cast<std::size_t>(max_degree) + 1;
  for (std::size_t i = 0; i < basis.dim; ++i)
    legendre_table(max_degree, u[i], scratch.subspan(i * stride, stride));
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const auto& a = basis.indices[j];
    double v = 1.0;
    for (std::size_t i = 0; i < basis.dim; ++i)
      if (a[i] != 0) v *= scratch[i * stride + static_cast<std::size_t>(a[i])];
    row[j] = v;
  }
}

/// Basis evaluations B (K x |basis|) at K design points in raw coordinates.
inline Eigen::MatrixXd design_matrix(const MultiIndexSet& basis, const InputTransform& transform,
                                     const Eigen::MatrixXd& design) {
  if (static_cast<std::size_t>(design.cols()) != basis.dim || transform.dim() != basis.dim)
    throw DomainError("design matrix: dimension mismatch");
  const int pmax = basis.max_degree();
  Eigen::MatrixXd b(design.rows(), static_cast<Eigen::Index>(basis.size()));
  std::vector<double> x(basis.dim), u(basis.dim), scratch(basis.dim * static_cast<std::size_t>(pmax + 1)),
      row(basis.size());
  for (Eigen::Index k = 0; k < design.rows(); ++k) {
    for (std::size_t i = 0; i < basis.dim; ++i) x[i] = design(k, static_cast<Eigen::Index>(i));
    if (!transform.contains(x)) throw DomainError("design point " + std::to_string(k) + " outside the input box");
    transform.to_unit(x, u);
    eval_basis_row(basis, pmax, u, scratch, row);
    for (std::size_t j = 0; j < basis.size(); ++j) b(k, static_cast<Eigen::Index>(j)) = row[j];
  }
  return b;
}

/// Fitted expansion of one scalar target.
struct PceFit {
  MultiIndexSet basis;
  Eigen::VectorXd coefficients;
  InputTransform transform;
  double loo_error = 0.0;     ///< leave-one-out error relative to the target variance
  double loo_absolute = 0.0;  ///< leave-one-out mean squared error
  int degree = 0;             ///< total degree of the truncation

  /// Variance of the expansion under the input distribution: Σ_{α≠0} a_α².
  double variance() const {
    double d = 0.0;
    for (std::size_t j = 0; j < basis.size(); ++j)
      if (total_degree(basis.indices[j]) > 0) d += coefficients[static_cast<Eigen::Index>(j)] * coefficients[static_cast<Eigen::Index>(j)];
    return d;
  }
};

/// Least-squares solver for one design and basis, shared by several targets.
///
/// Uses a column-pivoting QR of B; the hat-matrix diagonal is the squared row
/// norm of the thin Q factor.
class LeastSquares {
 public:
  explicit LeastSquares(const Eigen::MatrixXd& b) : qr_(b) {
    const auto k = b.rows(), p = b.cols();
    if (k <= p) {
      std::ostringstream os;
      os << "least squares needs more design points than basis terms (K = " << k << ", |A| = " << p << ")";
      throw FitError(os.str());
    }
    if (qr_.rank() < p) {
      const auto& r = qr_.matrixQR();
      const double ratio = std::abs(r(p - 1, p - 1)) / std::abs(r(0, 0));
      std::ostringstream os;
      os << "rank-deficient basis matrix (rank " << qr_.rank() << " of " << p
         << ", |r_min/r_max| = " << ratio << ")";
      throw FitError(os.str());
    }
    const Eigen::MatrixXd q = qr_.householderQ() * Eigen::MatrixXd::Identity(k, p);
    leverage_ = q.rowwise().squaredNorm();
    b_ = b;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& y) const { return qr_.solve(y); }
  const Eigen::VectorXd& leverage() const { return leverage_; }

  /// Mean squared leave-one-out residual from the closed form.
  double loo(const Eigen::VectorXd& y, const Eigen::VectorXd& coefficients) const {
    const Eigen::VectorXd r = y - b_ * coefficients;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double denom = 1.0 - leverage_[i];
      if (denom <= 1e-12) return std::numeric_limits<double>::infinity();
      const double e = r[i] / denom;
      sum += e * e;
    }
    return sum / static_cast<double>(r.size());
  }

 private:
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
  Eigen::MatrixXd b_;
  Eigen::VectorXd leverage_;
};

namespace detail {

inline double sample_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 0.0;
  const double m = y.mean();
  return (y.array() - m).square().sum() / static_cast<double>(y.size() - 1);
}

inline PceFit make_fit(const MultiIndexSet& basis, const InputTransform& transform, const LeastSquares& ls,
                       const Eigen::VectorXd& y) {
  PceFit f;
  f.basis = basis;
  f.transform = transform;
  f.coefficients = ls.solve(y);
  f.loo_absolute = ls.loo(y, f.coefficients);
  const double var = sample_variance(y);
  f.loo_error = var > 0.0 ? f.loo_absolute / var : f.loo_absolute;
  for (const auto& a : basis.indices) f.degree = std::max(f.degree, total_degree(a));
  return f;
}

}  // namespace detail

/// Least-squares PCE on a given truncation set. `design` is K x M in raw
/// coordinates, mapped to the hypercube by `transform`.
inline PceFit fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, const MultiIndexSet& basis,
                  const InputTransform& transform) {
  if (design.rows() != targets.size()) throw FitError("fit: design and target counts differ");
  const LeastSquares ls(design_matrix(basis, transform, design));
  return detail::make_fit(basis, transform, ls, targets);
}

/// Fits each column of `targets` with a total-degree basis whose degree is
/// chosen in [min_degree, max_degree] by smallest leave-one-out error (ties
/// go to the smaller degree). Degrees whose basis is not smaller than K are
/// skipped. The QR of each candidate basis is shared by all columns.
inline std::vector<PceFit> fit_adaptive(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                                        const InputTransform& transform, int min_degree, int max_degree) {
  const auto k = design.rows();
  const auto dim = static_cast<std::size_t>(design.cols());
  if (targets.rows() != k) throw FitError("fit: design and target counts differ");
  if (min_degree < 0 || max_degree < min_degree) throw FitError("fit: invalid degree range");
  std::vector<PceFit> best(static_cast<std::size_t>(targets.cols()));
  std::vector<double> best_loo(best.size(), std::numeric_limits<double>::infinity());
  bool any = false;
  for (int p = min_degree; p <= max_degree; ++p) {
    if (static_cast<Eigen::Index>(total_degree_size(dim, p)) >= k) break;
    const auto basis = build_total_degree_basis(dim, p);
    const LeastSquares ls(design_matrix(basis, transform, design));
    any = true;
    for (std::size_t c = 0; c < best.size(); ++c) {
      auto f = detail::make_fit(basis, transform, ls, targets.col(static_cast<Eigen::Index>(c)));
      f.degree = p;
      if (f.loo_absolute < best_loo[c] || best[c].basis.size() == 0) {
        best_loo[c] = f.loo_absolute;
        best[c] = std::move(f);
      }
    }
  }
  if (!any) {
    std::ostringstream os;
    os << "no candidate degree in [" << min_degree << ", " << max_degree << "] has a basis smaller than K = " << k;
    throw FitError(os.str());
  }
  return best;
}

/// Evaluates the expansion at a raw-space point inside the input box.
inline double predict(const PceFit& fit, std::span<const double> x) {
  if (x.size() != fit.transform.dim()) throw DomainError("predict: dimension mismatch");
  if (!fit.transform.contains(x)) throw DomainError("predict: point outside the input box");
  const auto u = fit.transform.to_unit(x);
  const int pmax = fit.basis.max_degree();
  std::vector<double> scratch(u.size() * static_cast<std::size_t>(pmax + 1)), row(fit.basis.size());
  eval_basis_row(fit.basis, pmax, u, scratch, row);
  double v = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) v += fit.coefficients[static_cast<Eigen::Index>(j)] * row[j];
  return v;
}

}  // namespace firecal::pce
