#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <list>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "firecal/error.hpp"
#include "firecal/material.hpp"

namespace firecal::bayes {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr std::size_t kModelDim = 6;
inline constexpr std::size_t kDiscrepancyDim = 8;
inline constexpr std::size_t kFullDim = kModelDim + kDiscrepancyDim;

/// Discrepancy term: σ(t) polynomial coefficients ϖ0..ϖ6 (°C) and the
/// correlation length θ (s).
struct DiscrepancyParams {
  std::array<double, 7> varpi{};
  double theta = 30.0;

  static DiscrepancyParams from_full(std::span<const double> x) {
    if (x.size() != kFullDim) throw DomainError("expected a 14-component parameter vector");
    DiscrepancyParams d;
    for (std::size_t k = 0; k < 7; ++k) d.varpi[k] = x[kModelDim + k];
    d.theta = x[kFullDim - 1];
    return d;
  }

  static DiscrepancyParams constant(double sigma, double theta) {
    DiscrepancyParams d;
    d.varpi[0] = sigma;
    d.theta = theta;
    return d;
  }

  bool operator==(const DiscrepancyParams&) const = default;
};

/// Sensor series on a shared time grid: values(i, s) is sensor s at times[i].
struct MeasurementSet {
  Eigen::VectorXd times;
  Eigen::MatrixXd values;
  std::string setup;

  Eigen::Index n_times() const { return times.size(); }
  Eigen::Index n_sensors() const { return values.cols(); }
};

/// Matérn 5/2 correlation at lag h for length θ.
inline double matern52(double h, double theta) {
  if (!(theta > 0.0)) throw DomainError("matern52: theta must be positive");
  const double r = std::sqrt(5.0) * std::abs(h) / theta;
  return (1.0 + r + r * r / 3.0) * std::exp(-r);
}

/// Classical Legendre polynomial P_n(x) (P_n(1) = 1).
inline double legendre_classical(int n, double x) {
  if (n == 0) return 1.0;
  double p0 = 1.0, p1 = x;
  for (int k = 1; k < n; ++k) {
    const double p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

/// σ_i = Σ_k ϖ_k P_k(2(t_i - t_1)/t_N - 1).
inline Eigen::VectorXd sigma_vector(const DiscrepancyParams& d, const Eigen::VectorXd& times) {
  Eigen::VectorXd s(times.size());
  if (times.size() == 0) return s;
  const double t1 = times[0], tn = times[times.size() - 1];
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    const double x = tn != 0.0 ? 2.0 * (times[i] - t1) / tn - 1.0 : -1.0;
    double v = 0.0;
    for (int k = 0; k < 7; ++k) v += d.varpi[static_cast<std::size_t>(k)] * legendre_classical(k, x);
    s[i] = v;
  }
  return s;
}

/// Σ_ij = σ_i σ_j R(t_i - t_j, θ). θ ≤ 0 gives the uncorrelated limit.
inline Eigen::MatrixXd build_covariance(const DiscrepancyParams& d, const Eigen::VectorXd& times) {
  const Eigen::VectorXd s = sigma_vector(d, times);
  const auto n = times.size();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    c(j, j) = s[j] * s[j];
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double r = d.theta > 0.0 ? matern52(times[i] - times[j], d.theta) : 0.0;
      c(i, j) = c(j, i) = s[i] * s[j] * r;
    }
  }
  return c;
}

inline bool sigma_positive(const Eigen::VectorXd& s) { return (s.array() > 0.0).all(); }

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline void check_shapes(const Eigen::VectorXd& prediction, const MeasurementSet& data) {
  if (prediction.size() != data.n_times() * data.n_sensors())
    throw DomainError("model output length " + std::to_string(prediction.size()) + " does not match " +
                      std::to_string(data.n_sensors()) + " sensors x " + std::to_string(data.n_times()) +
                      " times");
}

/// Residuals scaled by σ: column s is (model_s - y_s) / σ.
inline Eigen::MatrixXd scaled_residuals(const Eigen::VectorXd& prediction, const MeasurementSet& data,
                                        const Eigen::VectorXd& sigma) {
  const auto n = data.n_times();
  Eigen::MatrixXd f(n, data.n_sensors());
  for (Eigen::Index s = 0; s < data.n_sensors(); ++s)
    f.col(s) = (prediction.segment(s * n, n) - data.values.col(s)).cwiseQuotient(sigma);
  return f;
}

inline bool uniform_grid(const Eigen::VectorXd& t) {
  if (t.size() < 3) return true;
  const double dt = t[1] - t[0];
  for (Eigen::Index i = 2; i < t.size(); ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-9 * std::max(1.0, std::abs(dt))) return false;
  return dt > 0.0;
}

}  // namespace detail

/// State-space form of the unit-variance Matérn 5/2 process, (f, f', f'').
struct MaternStateSpace {
  Eigen::Matrix3d transition;  // A = exp(F Δt)
  Eigen::Matrix3d noise;       // Q = P∞ - A P∞ Aᵀ
  Eigen::Matrix3d stationary;  // P∞

  MaternStateSpace(double theta, double dt) {
    const double lam = std::sqrt(5.0) / theta;
    const double kappa = lam * lam / 3.0;
    Eigen::Matrix3d f;
    f << 0, 1, 0, 0, 0, 1, -lam * lam * lam, -3 * lam * lam, -3 * lam;
    stationary << 1, 0, -kappa, 0, kappa, 0, -kappa, 0, lam * lam * lam * lam;
    transition = (f * dt).exp();
    noise = stationary - transition * stationary * transition.transpose();
    noise = 0.5 * (noise + noise.transpose()).eval();
  }
};

/// Gaussian log-density Σ_s ln N(y_s; model_s, Σ) with a dense Cholesky of Σ.
/// Returns -inf when some σ_i ≤ 0 or Σ is not positive definite.
inline double log_likelihood_dense(const Eigen::VectorXd& prediction, const MeasurementSet& data,
                                   const DiscrepancyParams& d) {
  detail::check_shapes(prediction, data);
  const Eigen::VectorXd sigma = sigma_vector(d, data.times);
  if (!sigma_positive(sigma)) return kNegInf;
  const auto n = data.n_times();
  Eigen::LLT<Eigen::MatrixXd> llt(build_covariance(d, data.times));
  if (llt.info() != Eigen::Success) return kNegInf;
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  double ll = 0.0;
  for (Eigen::Index s = 0; s < data.n_sensors(); ++s) {
    const Eigen::VectorXd r = prediction.segment(s * n, n) - data.values.col(s);
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    ll += -0.5 * (static_cast<double>(n) * detail::kLog2Pi + logdet + w.squaredNorm());
  }
  return ll;
}

/// Same density evaluated exactly by a Kalman filter on the state-space form
/// of the Matérn 5/2 process, O(N) per sensor. The filter gains do not depend
/// on the data and are shared by all sensors. Falls back to the dense route
/// on a non-uniform grid.
inline double log_likelihood(const Eigen::VectorXd& prediction, const MeasurementSet& data,
                             const DiscrepancyParams& d) {
  detail::check_shapes(prediction, data);
  const Eigen::VectorXd sigma = sigma_vector(d, data.times);
  if (!sigma_positive(sigma)) return kNegInf;
  const auto n = data.n_times();
  const auto ns = data.n_sensors();
  const Eigen::MatrixXd f = detail::scaled_residuals(prediction, data, sigma);
  const double log_sigma = sigma.array().log().sum();

  const bool uniform = detail::uniform_grid(data.times);
  const double dt = n > 1 ? data.times[1] - data.times[0] : 1.0;
  // Beyond √5·Δt/θ = 50 neighbouring correlations are below 1e-18.
  if (!(d.theta > 0.0) || (uniform && std::sqrt(5.0) * dt / d.theta > 50.0)) {
    return -0.5 * static_cast<double>(ns) * (static_cast<double>(n) * detail::kLog2Pi + 2.0 * log_sigma) -
           0.5 * f.squaredNorm();
  }
  if (!uniform) return log_likelihood_dense(prediction, data, d);

  const MaternStateSpace ss(d.theta, dt);
  Eigen::Matrix3d p = ss.stationary;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, ns);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0) {
      m = ss.transition * m;
      p = ss.transition * p * ss.transition.transpose() + ss.noise;
    }
    const double s = p(0, 0);
    if (!(s > 1e-12)) return log_likelihood_dense(prediction, data, d);
    const Eigen::RowVectorXd v = f.row(i) - m.row(0);
    ll += -0.5 * (static_cast<double>(ns) * (detail::kLog2Pi + std::log(s)) + v.squaredNorm() / s);
    const Eigen::Vector3d k = p.col(0) / s;
    m += k * v;
    p -= k * k.transpose() * s;
    p = 0.5 * (p + p.transpose()).eval();
  }
  return ll - static_cast<double>(ns) * log_sigma;
}

/// Independent uniform prior over the 14 parameters.
struct PriorSpec {
  std::vector<std::string> names;
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }

  void check() const {
    if (lower.size() != upper.size() || names.size() != lower.size())
      throw ConfigError("prior: bounds and names must have equal length");
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] <= upper[i])) throw ConfigError("prior: lower bound exceeds upper bound for " + names[i]);
  }

  double mean(std::size_t i) const { return 0.5 * (lower[i] + upper[i]); }
  double stddev(std::size_t i) const { return (upper[i] - lower[i]) / std::sqrt(12.0); }

  /// Model parameter ranges x1..x6, ϖ0 ∈ [0, 20], ϖ1..ϖ6 ∈ [-20, 20], θ ∈ [0, 50] s.
  static PriorSpec defaults() {
    PriorSpec p;
    for (const auto& r : kMaterialRanges) {
      p.names.emplace_back(r.name);
      p.lower.push_back(r.lower);
      p.upper.push_back(r.upper);
    }
    for (int k = 0; k <= 6; ++k) {
      p.names.push_back("varpi" + std::to_string(k));
      p.lower.push_back(k == 0 ? 0.0 : -20.0);
      p.upper.push_back(20.0);
    }
    p.names.emplace_back("theta");
    p.lower.push_back(0.0);
    p.upper.push_back(50.0);
    return p;
  }
};

/// -Σ ln(width) inside the box, -inf outside. Zero-width dimensions act as
/// fixed values and contribute nothing.
inline double log_prior(std::span<const double> x, const PriorSpec& spec) {
  if (x.size() != spec.dim()) throw DomainError("log_prior: dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= spec.lower[i] && x[i] <= spec.upper[i])) return kNegInf;
    const double w = spec.upper[i] - spec.lower[i];
    if (w > 0.0) lp -= std::log(w);
  }
  return lp;
}

/// Model output for the six material parameters, sensor series concatenated.
using ModelFn = std::function<Eigen::VectorXd(std::span<const double>)>;

/// Unnormalized log-posterior log π(x) + log L(x; y).
inline double log_posterior(std::span<const double> x, const MeasurementSet& data, const ModelFn& model,
                            const PriorSpec& spec) {
  const double lp = log_prior(x, spec);
  if (lp == kNegInf) return kNegInf;
  const auto d = DiscrepancyParams::from_full(x);
  if (!sigma_positive(sigma_vector(d, data.times))) return kNegInf;
  const Eigen::VectorXd y = model(x.first(kModelDim));
  return lp + log_likelihood(y, data, d);
}

/// Row of `samples` with the largest stored log-posterior (first on ties).
inline Eigen::VectorXd map_estimate(const Eigen::MatrixXd& samples, const Eigen::VectorXd& log_post) {
  if (samples.rows() == 0) throw DomainError("map_estimate: empty sample");
  if (log_post.size() != samples.rows()) throw DomainError("map_estimate: length mismatch");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < log_post.size(); ++i)
    if (log_post[i] > log_post[best]) best = i;
  return samples.row(best).transpose();
}

/// Cholesky factors of Σ keyed by discrepancy parameters. Thread-safe.
class CovarianceCache {
 public:
  explicit CovarianceCache(std::size_t capacity = 32) : capacity_(capacity) {}

  /// Lower Cholesky factor of Σ(d) on `times`; throws DomainError if Σ is not
  /// positive definite.
  Eigen::MatrixXd factor(const DiscrepancyParams& d, const Eigen::VectorXd& times) {
    {
      std::lock_guard lock(mutex_);
      for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (it->params == d && it->times.size() == times.size() && it->times == times) {
          entries_.splice(entries_.begin(), entries_, it);
          return entries_.front().factor;
        }
      }
    }
    // All-zero discrepancy: noise-free draws.
    if (std::all_of(d.varpi.begin(), d.varpi.end(), [](double v) { return v == 0.0; }))
      return Eigen::MatrixXd::Zero(times.size(), times.size());
    const Eigen::VectorXd s = sigma_vector(d, times);
    if (!sigma_positive(s)) throw DomainError("discrepancy standard deviation is not positive on the grid");
    Eigen::LLT<Eigen::MatrixXd> llt(build_covariance(d, times));
    if (llt.info() != Eigen::Success) throw DomainError("discrepancy covariance is not positive definite");
    Eigen::MatrixXd l = llt.matrixL();
    std::lock_guard lock(mutex_);
    entries_.push_front({d, times, l});
    if (entries_.size() > capacity_) entries_.pop_back();
    return l;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  struct Entry {
    DiscrepancyParams params;
    Eigen::VectorXd times;
    Eigen::MatrixXd factor;
  };
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> entries_;
};

/// One posterior-predictive draw: the source sample and the noisy trajectories.
struct PredictiveDraw {
  Eigen::Index sample = 0;
  Eigen::VectorXd model;   ///< model output, sensor series concatenated
  Eigen::VectorXd values;  ///< model + discrepancy draw
};

/// Draws `count` trajectories: pick a posterior sample uniformly, evaluate the
/// model, add a zero-mean Gaussian draw with the sample's discrepancy (or the
/// override) independently for each of `n_sensors` series.
inline std::vector<PredictiveDraw> posterior_predictive_sample(
    const Eigen::MatrixXd& samples, const ModelFn& model, const Eigen::VectorXd& times, Eigen::Index n_sensors,
    const std::optional<DiscrepancyParams>& override_d, std::size_t count, std::uint64_t seed,
    CovarianceCache* cache = nullptr) {
  if (samples.rows() == 0) throw DomainError("posterior_predictive_sample: empty sample");
  if (samples.cols() != static_cast<Eigen::Index>(kFullDim)) throw DomainError("posterior sample must have 14 columns");
  CovarianceCache local;
  CovarianceCache& cc = cache ? *cache : local;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, samples.rows() - 1);
  std::normal_distribution<double> normal;
  const auto n = times.size();
  std::vector<PredictiveDraw> out;
  out.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    PredictiveDraw dr;
    dr.sample = pick(rng);
    const Eigen::VectorXd x = samples.row(dr.sample).transpose();
    const auto d = override_d ? *override_d : DiscrepancyParams::from_full(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    dr.model = model(std::span<const double>(x.data(), kModelDim));
    if (dr.model.size() != n * n_sensors) throw DomainError("model output does not match the target grid");
    const Eigen::MatrixXd l = cc.factor(d, times);
    dr.values = dr.model;
    Eigen::VectorXd xi(n);
    for (Eigen::Index s = 0; s < n_sensors; ++s) {
      for (Eigen::Index i = 0; i < n; ++i) xi[i] = normal(rng);
      dr.values.segment(s * n, n) += l.triangularView<Eigen::Lower>() * xi;
    }
    out.push_back(std::move(dr));
  }
  return out;
}

}  // namespace firecal::bayes
