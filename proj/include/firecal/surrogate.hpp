#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "firecal/error.hpp"
#include "firecal/pca.hpp"
#include "firecal/pce.hpp"

namespace firecal::surrogate {

/// Design points (K x M) and, once evaluated, the K x N responses.
struct ExperimentalDesign {
  Eigen::MatrixXd points;
  Eigen::MatrixXd responses;
  std::string sampling = "lhs";
  std::uint64_t seed = 0;

  Eigen::Index size() const { return points.rows(); }
  bool evaluated() const { return responses.rows() == points.rows() && responses.cols() > 0; }
};

/// Latin hypercube sample of the box: each column has exactly one point in
/// each of the K equal-width strata.
inline ExperimentalDesign build_design(const pce::InputTransform& box, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw DomainError("build_design: K must be at least 1");
  const std::size_t m = box.dim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ExperimentalDesign d;
  d.seed = seed;
  d.points.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  std::vector<std::size_t> perm(k);
  for (std::size_t j = 0; j < m; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lo = box.lower[j], w = box.upper[j] - box.lower[j];
    for (std::size_t i = 0; i < k; ++i) {
      const double u = (static_cast<double>(perm[i]) + unif(rng)) / static_cast<double>(k);
      d.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::min(lo + u * w, box.upper[j]);
    }
  }
  return d;
}

/// Forward model mapping one parameter point to its output vector.
using ForwardModel = std::function<Eigen::VectorXd(std::span<const double>)>;

/// Fills design.responses with one model run per point. Runs are spread over
/// `threads` workers; every row depends only on its own point. On failure the
/// error of the lowest failing index is rethrown, naming that index, and the
/// design is left without responses.
inline void evaluate_design(ExperimentalDesign& design, const ForwardModel& model, unsigned threads = 1) {
  const auto k = design.points.rows();
  const auto m = design.points.cols();
  std::vector<Eigen::VectorXd> rows(static_cast<std::size_t>(k));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
  std::atomic<Eigen::Index> next{0};
  auto worker = [&] {
    std::vector<double> x(static_cast<std::size_t>(m));
    for (Eigen::Index i = next++; i < k; i = next++) {
      for (Eigen::Index j = 0; j < m; ++j) x[static_cast<std::size_t>(j)] = design.points(i, j);
      try {
        rows[static_cast<std::size_t>(i)] = model(x);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  design.responses.resize(0, 0);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& err = errors[static_cast<std::size_t>(i)];
    if (!err) continue;
    const std::string where = "design point " + std::to_string(i) + ": ";
    try {
      std::rethrow_exception(err);
    } catch (const SolverError& e) {
      throw SolverError(e.step(), e.residual(), where + e.what());
    } catch (const std::exception& e) {
      throw Error(where + e.what());
    }
  }
  const auto n = k > 0 ? rows[0].size() : 0;
  Eigen::MatrixXd resp(k, n);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (r.size() != n) throw Error("design point " + std::to_string(i) + ": output length differs from point 0");
    if (!r.allFinite()) throw Error("design point " + std::to_string(i) + ": non-finite model output");
    resp.row(i) = r.transpose();
  }
  design.responses = std::move(resp);
}

/// Layout of the output vector: `n_sensors` consecutive series of `n_steps` values.
struct OutputLayout {
  std::uint64_t n_sensors = 1;
  std::uint64_t n_steps = 0;
  double tau = 10.0;
};

struct TrainOptions {
  double epsilon0 = 0.01;
  int min_degree = 2;
  int max_degree = 6;
};

/// PCA + PCE emulator: Y(x) ≈ μ + Φ Aᵀ Ψ(x).
struct SurrogateModel {
  pca::PcaModel pca;
  pce::InputTransform transform;
  pce::MultiIndexSet basis;        ///< union of the per-component bases
  Eigen::MatrixXd coefficients;    ///< A, |basis| x N'
  std::vector<int> degrees;        ///< selected total degree per component
  std::vector<double> loo_absolute;
  std::vector<double> loo_relative;
  double eta = 0.0;
  OutputLayout layout;

  Eigen::Index n_outputs() const { return pca.dim(); }
  Eigen::Index n_components() const { return pca.n_retained; }
  std::size_t n_inputs() const { return transform.dim(); }
};

/// η̃ = (√ε_PCA + √ε_PCE)² / Tr(Σ_Y), with ε_PCA the discarded eigenvalue sum
/// and ε_PCE the sum of absolute leave-one-out errors. Zero for constant data.
inline double error_estimate(const SurrogateModel& m) {
  const double trace = m.pca.total_variance();
  if (!(trace > 0.0)) return 0.0;
  double e_pce = 0.0;
  for (double v : m.loo_absolute) e_pce += v;
  const double s = std::sqrt(std::max(m.pca.discarded, 0.0)) + std::sqrt(e_pce);
  return s * s / trace;
}

inline SurrogateModel train(const ExperimentalDesign& design, const pce::InputTransform& box,
                            const TrainOptions& opt = {}, OutputLayout layout = {}) {
  if (!design.evaluated()) throw FitError("train: design has no responses");
  if (static_cast<std::size_t>(design.points.cols()) != box.dim()) throw FitError("train: input dimension mismatch");
  SurrogateModel m;
  m.transform = box;
  m.layout = layout;
  if (m.layout.n_steps == 0) m.layout.n_steps = static_cast<std::uint64_t>(design.responses.cols());
  if (m.layout.n_sensors * m.layout.n_steps != static_cast<std::uint64_t>(design.responses.cols()))
    throw FitError("train: output layout does not match response width");
  m.pca = pca::fit_pca(design.responses, opt.epsilon0);
  const auto np = m.pca.n_retained;
  if (np == 0) {
    m.basis = pce::build_total_degree_basis(box.dim(), 0);
    m.coefficients = Eigen::MatrixXd::Zero(1, 0);
    m.eta = error_estimate(m);
    return m;
  }
  const Eigen::MatrixXd centered = design.responses.rowwise() - m.pca.mean.transpose();
  const Eigen::MatrixXd scores = centered * m.pca.components;
  const auto fits = pce::fit_adaptive(design.points, scores, box, opt.min_degree, opt.max_degree);

  int pmax = 0;
  for (const auto& f : fits) pmax = std::max(pmax, f.degree);
  m.basis = pce::build_total_degree_basis(box.dim(), pmax);
  m.coefficients = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.basis.size()), np);
  for (Eigen::Index p = 0; p < np; ++p) {
    const auto& f = fits[static_cast<std::size_t>(p)];
    for (std::size_t j = 0; j < f.basis.size(); ++j)
      m.coefficients(static_cast<Eigen::Index>(m.basis.find(f.basis.indices[j])), p) =
          f.coefficients[static_cast<Eigen::Index>(j)];
    m.degrees.push_back(f.degree);
    m.loo_absolute.push_back(f.loo_absolute);
    m.loo_relative.push_back(f.loo_error);
  }
  m.eta = error_estimate(m);
  return m;
}

/// Ψ(x): all union-basis polynomials at a raw-space point.
inline Eigen::VectorXd basis_vector(const SurrogateModel& m, std::span<const double> x) {
  if (x.size() != m.n_inputs()) throw DomainError("surrogate: expected " + std::to_string(m.n_inputs()) + " inputs");
  if (!m.transform.contains(x)) throw DomainError("surrogate: point outside the input box");
  const auto u = m.transform.to_unit(x);
  const int pmax = m.basis.max_degree();
  std::vector<double> scratch(u.size() * static_cast<std::size_t>(pmax + 1));
  Eigen::VectorXd psi(static_cast<Eigen::Index>(m.basis.size()));
  pce::eval_basis_row(m.basis, pmax, u, scratch, std::span<double>(psi.data(), static_cast<std::size_t>(psi.size())));
  return psi;
}

/// Principal-component scores Aᵀ Ψ(x).
inline Eigen::VectorXd predict_scores(const SurrogateModel& m, std::span<const double> x) {
  return m.coefficients.transpose() * basis_vector(m, x);
}

/// Matrix form μ + Φ (Aᵀ Ψ(x)).
inline Eigen::VectorXd predict(const SurrogateModel& m, std::span<const double> x) {
  return m.pca.mean + m.pca.components * predict_scores(m, x);
}

/// Same prediction assembled one output at a time, Y_t = μ_t + φ_t·(AᵀΨ).
inline Eigen::VectorXd predict_componentwise(const SurrogateModel& m, std::span<const double> x) {
  const Eigen::VectorXd z = predict_scores(m, x);
  Eigen::VectorXd y(m.n_outputs());
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    double v = m.pca.mean[t];
    for (Eigen::Index p = 0; p < z.size(); ++p) v += m.pca.components(t, p) * z[p];
    y[t] = v;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Binary format, all little-endian:
//   "FCSM" | u32 version | u64 n_sensors | u64 n_steps | f64 tau | u64 M |
//   f64 lower[M] | f64 upper[M] | u64 N | f64 mean[N] | u64 R | f64 eigenvalues[R] |
//   u64 N' | f64 components[N*N'] (column-major) | f64 discarded |
//   u64 |A| | i32 indices[|A|*M] | f64 coefficients[|A|*N'] (column-major) |
//   i32 degrees[N'] | f64 loo_absolute[N'] | f64 loo_relative[N'] | f64 eta

inline constexpr char kSurrogateMagic[4] = {'F', 'C', 'S', 'M'};
inline constexpr std::uint32_t kSurrogateVersion = 1;

namespace io {

template <class T>
void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw ConfigError("surrogate file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void put_doubles(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put(os, p[i]);
}

inline void get_doubles(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = get<double>(is);
}

inline std::uint64_t get_count(std::istream& is, std::uint64_t limit = std::uint64_t{1} << 32) {
  const auto n = get<std::uint64_t>(is);
  if (n > limit) throw ConfigError("surrogate file: implausible size field");
  return n;
}

}  // namespace io

inline void save(const SurrogateModel& m, std::ostream& os) {
  using namespace io;
  os.write(kSurrogateMagic, 4);
  put(os, kSurrogateVersion);
  put(os, m.layout.n_sensors);
  put(os, m.layout.n_steps);
  put(os, m.layout.tau);
  const auto dim = static_cast<std::uint64_t>(m.n_inputs());
  put(os, dim);
  put_doubles(os, m.transform.lower.data(), dim);
  put_doubles(os, m.transform.upper.data(), dim);
  put(os, static_cast<std::uint64_t>(m.pca.mean.size()));
  put_doubles(os, m.pca.mean.data(), static_cast<std::size_t>(m.pca.mean.size()));
  put(os, static_cast<std::uint64_t>(m.pca.eigenvalues.size()));
  put_doubles(os, m.pca.eigenvalues.data(), static_cast<std::size_t>(m.pca.eigenvalues.size()));
  put(os, static_cast<std::uint64_t>(m.pca.n_retained));
  put_doubles(os, m.pca.components.data(), static_cast<std::size_t>(m.pca.components.size()));
  put(os, m.pca.discarded);
  put(os, static_cast<std::uint64_t>(m.basis.size()));
  for (const auto& a : m.basis.indices)
    for (int k : a) put(os, static_cast<std::int32_t>(k));
  put_doubles(os, m.coefficients.data(), static_cast<std::size_t>(m.coefficients.size()));
  for (int d : m.degrees) put(os, static_cast<std::int32_t>(d));
  put_doubles(os, m.loo_absolute.data(), m.loo_absolute.size());
  put_doubles(os, m.loo_relative.data(), m.loo_relative.size());
  put(os, m.eta);
  if (!os) throw Error("failed to write surrogate");
}

inline SurrogateModel load(std::istream& is) {
  using namespace io;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kSurrogateMagic, 4) != 0) throw ConfigError("not a surrogate file");
  const auto version = get<std::uint32_t>(is);
  if (version != kSurrogateVersion)
    throw ConfigError("unsupported surrogate file version " + std::to_string(version));
  SurrogateModel m;
  m.layout.n_sensors = get<std::uint64_t>(is);
  m.layout.n_steps = get<std::uint64_t>(is);
  m.layout.tau = get<double>(is);
  const auto dim = get_count(is, 64);
  m.transform.lower.resize(dim);
  m.transform.upper.resize(dim);
  get_doubles(is, m.transform.lower.data(), dim);
  get_doubles(is, m.transform.upper.data(), dim);
  const auto n = get_count(is);
  m.pca.mean.resize(static_cast<Eigen::Index>(n));
  get_doubles(is, m.pca.mean.data(), n);
  const auto r = get_count(is);
  m.pca.eigenvalues.resize(static_cast<Eigen::Index>(r));
  get_doubles(is, m.pca.eigenvalues.data(), r);
  const auto np = get_count(is, n);
  m.pca.n_retained = static_cast<Eigen::Index>(np);
  m.pca.components.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(np));
  get_doubles(is, m.pca.components.data(), n * np);
  m.pca.discarded = get<double>(is);
  const auto nb = get_count(is);
  m.basis.dim = dim;
  m.basis.indices.assign(nb, pce::MultiIndex(dim));
  for (auto& a : m.basis.indices)
    for (auto& k : a) k = get<std::int32_t>(is);
  m.coefficients.resize(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(np));
  get_doubles(is, m.coefficients.data(), nb * np);
  m.degrees.resize(np);
  for (auto& d : m.degrees) d = get<std::int32_t>(is);
  m.loo_absolute.resize(np);
  m.loo_relative.resize(np);
  get_doubles(is, m.loo_absolute.data(), np);
  get_doubles(is, m.loo_relative.data(), np);
  m.eta = get<double>(is);
  return m;
}

}  // namespace firecal::surrogate
