#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ios>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "firecal/bayes.hpp"
#include "firecal/error.hpp"

namespace firecal::aies {

using LogTarget = std::function<double(std::span<const double>)>;

struct SamplerConfig {
  std::size_t n_walkers = 28;
  double a = 2.0;               // stretch scale
  std::size_t n_steps = 2000;   // sweeps, counted from step 0
  double burn_in = 0.5;         // fraction of sweeps discarded by post_burn_in()
  std::uint64_t seed = 1;
  std::size_t stuck_window = 200;  // sweeps; 0 disables the check
  double stuck_threshold = 0.01;

  void check(std::size_t dim) const {
    if (n_walkers < 2) throw DomainError("sampler: at least two walkers are required");
    if (!(a > 1.0)) throw DomainError("sampler: stretch parameter a must exceed 1");
    if (!(burn_in >= 0.0 && burn_in < 1.0)) throw DomainError("sampler: burn-in fraction must lie in [0, 1)");
    if (dim < 1) throw DomainError("sampler: dimension must be positive");
  }
};

/// Walker positions (L x M), cached log-target values, counters and RNG.
struct EnsembleState {
  Eigen::MatrixXd positions;
  Eigen::VectorXd log_prob;
  std::size_t step = 0;
  std::size_t accepted = 0;
  std::size_t proposed = 0;
  std::mt19937_64 rng;

  std::size_t n_walkers() const { return static_cast<std::size_t>(positions.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(positions.cols()); }
};

/// Inverse CDF of g(z) ∝ 1/√z on [1/a, a].
inline double stretch_from_uniform(double a, double u) {
  const double s = (a - 1.0) * u + 1.0;
  return s * s / a;
}

inline double uniform01(std::mt19937_64& rng) { return std::generate_canonical<double, 53>(rng); }

inline double stretch_draw(double a, std::mt19937_64& rng) {
  if (!(a > 1.0)) throw DomainError("stretch_draw: a must exceed 1");
  return stretch_from_uniform(a, uniform01(rng));
}

/// Stretch-move acceptance test: ln u < (M-1) ln z + log π(x̂) - log π(x̃).
inline bool accept(double z, std::size_t dim, double lp_new, double lp_old, double u) {
  if (lp_new == -std::numeric_limits<double>::infinity() || std::isnan(lp_new)) return false;
  return std::log(u) < (static_cast<double>(dim) - 1.0) * std::log(z) + lp_new - lp_old;
}

/// One sweep over the walkers in index order. Walker l is stretched towards a
/// partner drawn from the other walkers in their current state, so walkers
/// already moved in this sweep are used at their new positions. Each walker
/// consumes the RNG in a fixed order: partner, z, u. Returns the number of
/// accepted moves.
inline std::size_t step_ensemble(EnsembleState& st, const LogTarget& target, const SamplerConfig& cfg) {
  const auto nw = st.positions.rows();
  const auto dim = st.dim();
  std::uniform_int_distribution<Eigen::Index> pick(0, nw - 2);
  Eigen::VectorXd prop(static_cast<Eigen::Index>(dim));
  std::size_t acc = 0;
  for (Eigen::Index l = 0; l < nw; ++l) {
    Eigen::Index j = pick(st.rng);
    if (j >= l) ++j;
    const double z = stretch_draw(cfg.a, st.rng);
    const double u = uniform01(st.rng);
    prop = st.positions.row(j).transpose() + z * (st.positions.row(l) - st.positions.row(j)).transpose();
    double lp;
    try {
      lp = target(std::span<const double>(prop.data(), dim));
    } catch (const std::exception& e) {
      throw SamplerError("log-target failed for walker " + std::to_string(l) + " at step " +
                         std::to_string(st.step) + ": " + e.what());
    }
    if (accept(z, dim, lp, st.log_prob[l], u)) {
      st.positions.row(l) = prop.transpose();
      st.log_prob[l] = lp;
      ++acc;
    }
  }
  st.accepted += acc;
  st.proposed += static_cast<std::size_t>(nw);
  ++st.step;
  return acc;
}

/// Stored trajectory: positions and log-target per (step, walker).
struct Chain {
  std::size_t first_step = 0;
  std::size_t n_walkers = 0;
  std::size_t dim = 0;
  std::vector<double> positions;  // [step][walker][dim]
  std::vector<double> log_prob;   // [step][walker]

  std::size_t n_steps() const { return n_walkers ? log_prob.size() / n_walkers : 0; }

  double x(std::size_t s, std::size_t w, std::size_t k) const { return positions[(s * n_walkers + w) * dim + k]; }
  double lp(std::size_t s, std::size_t w) const { return log_prob[s * n_walkers + w]; }

  void append(const EnsembleState& st) {
    for (Eigen::Index w = 0; w < st.positions.rows(); ++w) {
      for (Eigen::Index k = 0; k < st.positions.cols(); ++k) positions.push_back(st.positions(w, k));
      log_prob.push_back(st.log_prob[w]);
    }
  }

  /// Samples from stored steps [from, n_steps()), one row per (step, walker).
  Eigen::MatrixXd flatten(std::size_t from, Eigen::VectorXd* lp_out = nullptr) const {
    const std::size_t ns = n_steps() > from ? n_steps() - from : 0;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ns * n_walkers), static_cast<Eigen::Index>(dim));
    if (lp_out) lp_out->resize(out.rows());
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t w = 0; w < n_walkers; ++w) {
        const auto r = static_cast<Eigen::Index>(s * n_walkers + w);
        for (std::size_t k = 0; k < dim; ++k) out(r, static_cast<Eigen::Index>(k)) = x(from + s, w, k);
        if (lp_out) (*lp_out)[r] = lp(from + s, w);
      }
    return out;
  }
};

struct RunResult {
  Chain chain;
  double acceptance_rate = 0.0;
  std::vector<double> autocorr_time;  // per dimension, post burn-in
  std::size_t burn_in_steps = 0;

  Eigen::MatrixXd post_burn_in(Eigen::VectorXd* lp = nullptr) const {
    const std::size_t skip = burn_in_steps > chain.first_step ? burn_in_steps - chain.first_step : 0;
    return chain.flatten(skip, lp);
  }
};

/// Integrated autocorrelation time per dimension, averaging the normalized
/// autocorrelation function over walkers and truncating the sum with Sokal's
/// self-consistent window (smallest W with W ≥ c·τ(W)).
inline std::vector<double> autocorrelation_time(const Chain& chain, std::size_t from = 0, double c = 5.0) {
  std::vector<double> tau(chain.dim, std::numeric_limits<double>::quiet_NaN());
  const std::size_t n = chain.n_steps() > from ? chain.n_steps() - from : 0;
  if (n < 4) return tau;
  std::vector<double> series(n);
  for (std::size_t k = 0; k < chain.dim; ++k) {
    std::vector<std::vector<double>> centered(chain.n_walkers, std::vector<double>(n));
    std::vector<double> c0(chain.n_walkers);
    for (std::size_t w = 0; w < chain.n_walkers; ++w) {
      double mean = 0.0;
      for (std::size_t s = 0; s < n; ++s) mean += chain.x(from + s, w, k);
      mean /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        centered[w][s] = chain.x(from + s, w, k) - mean;
        v += centered[w][s] * centered[w][s];
      }
      c0[w] = v / static_cast<double>(n);
    }
    double t = 1.0;
    for (std::size_t lag = 1; lag < n; ++lag) {
      double rho = 0.0;
      std::size_t used = 0;
      for (std::size_t w = 0; w < chain.n_walkers; ++w) {
        if (!(c0[w] > 0.0)) continue;
        double acc = 0.0;
        for (std::size_t s = 0; s + lag < n; ++s) acc += centered[w][s] * centered[w][s + lag];
        rho += acc / static_cast<double>(n) / c0[w];
        ++used;
      }
      if (used == 0) break;
      t += 2.0 * rho / static_cast<double>(used);
      if (static_cast<double>(lag) >= c * t) break;
    }
    tau[k] = t;
  }
  return tau;
}

using StepCallback = std::function<void(const EnsembleState&)>;

/// Advances `state` to cfg.n_steps sweeps, recording every sweep. Throws
/// SamplerError when the acceptance rate over the last cfg.stuck_window sweeps
/// falls below cfg.stuck_threshold.
inline RunResult run(const LogTarget& target, EnsembleState& state, const SamplerConfig& cfg,
                     const StepCallback& on_step = {}) {
  cfg.check(state.dim());
  if (state.n_walkers() != cfg.n_walkers) throw DomainError("sampler: ensemble size differs from configuration");
  for (Eigen::Index w = 0; w < state.log_prob.size(); ++w)
    if (!std::isfinite(state.log_prob[w]))
      throw SamplerError("initial walker " + std::to_string(w) + " has non-finite log-target");
  RunResult res;
  res.chain.first_step = state.step;
  res.chain.n_walkers = state.n_walkers();
  res.chain.dim = state.dim();
  const std::size_t start_acc = state.accepted, start_prop = state.proposed;
  std::vector<std::size_t> window;
  std::size_t window_acc = 0;
  while (state.step < cfg.n_steps) {
    const std::size_t a = step_ensemble(state, target, cfg);
    res.chain.append(state);
    if (on_step) on_step(state);
    if (cfg.stuck_window > 0) {
      window.push_back(a);
      window_acc += a;
      if (window.size() > cfg.stuck_window) {
        window_acc -= window.front();
        window.erase(window.begin());
      }
      if (window.size() == cfg.stuck_window) {
        const double rate = static_cast<double>(window_acc) / static_cast<double>(cfg.stuck_window * cfg.n_walkers);
        if (rate < cfg.stuck_threshold) {
          std::ostringstream os;
          os << "ensemble stuck: acceptance " << rate << " over the last " << cfg.stuck_window
             << " sweeps (step " << state.step << ")";
          throw SamplerError(os.str());
        }
      }
    }
  }
  const std::size_t prop = state.proposed - start_prop;
  res.acceptance_rate = prop ? static_cast<double>(state.accepted - start_acc) / static_cast<double>(prop) : 0.0;
  res.burn_in_steps = static_cast<std::size_t>(std::floor(cfg.burn_in * static_cast<double>(cfg.n_steps)));
  const std::size_t skip = res.burn_in_steps > res.chain.first_step ? res.burn_in_steps - res.chain.first_step : 0;
  res.autocorr_time = autocorrelation_time(res.chain, skip);
  return res;
}

/// Starting ensemble of L independent prior draws, each redrawn until the
/// target is finite. At most 10000 draws in total.
inline EnsembleState init_from_prior(const bayes::PriorSpec& prior, std::size_t n_walkers, std::uint64_t seed,
                                     const LogTarget& target) {
  const std::size_t dim = prior.dim();
  EnsembleState st;
  st.rng.seed(seed);
  st.positions.resize(static_cast<Eigen::Index>(n_walkers), static_cast<Eigen::Index>(dim));
  st.log_prob.resize(static_cast<Eigen::Index>(n_walkers));
  std::vector<double> x(dim);
  std::size_t tries = 0;
  constexpr std::size_t kMaxTries = 10000;
  for (std::size_t w = 0; w < n_walkers; ++w) {
    for (;;) {
      if (tries++ >= kMaxTries)
        throw SamplerError("no finite starting point after " + std::to_string(kMaxTries) + " prior draws");
      for (std::size_t k = 0; k < dim; ++k) x[k] = prior.lower[k] + (prior.upper[k] - prior.lower[k]) * uniform01(st.rng);
      const double lp = target(x);
      if (std::isfinite(lp)) {
        for (std::size_t k = 0; k < dim; ++k) st.positions(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k)) = x[k];
        st.log_prob[static_cast<Eigen::Index>(w)] = lp;
        break;
      }
    }
  }
  return st;
}

/// Ensemble from explicit positions, evaluating the target at each.
inline EnsembleState make_state(const Eigen::MatrixXd& positions, const LogTarget& target, std::uint64_t seed) {
  EnsembleState st;
  st.rng.seed(seed);
  st.positions = positions;
  st.log_prob.resize(positions.rows());
  for (Eigen::Index w = 0; w < positions.rows(); ++w) {
    const Eigen::VectorXd x = positions.row(w).transpose();
    st.log_prob[w] = target(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }
  return st;
}

// Checkpoint text format: a header line "firecal-aies-checkpoint 1", then
// "L M step accepted proposed", L lines of M positions followed by the
// log-target (hexadecimal floating point), and the RNG state on the last line.

inline void save_checkpoint(const EnsembleState& st, std::ostream& os) {
  os << "firecal-aies-checkpoint 1\n";
  os << st.n_walkers() << ' ' << st.dim() << ' ' << st.step << ' ' << st.accepted << ' ' << st.proposed << '\n';
  os << std::hexfloat;
  for (std::size_t w = 0; w < st.n_walkers(); ++w) {
    for (std::size_t k = 0; k < st.dim(); ++k) os << st.positions(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k)) << ' ';
    os << st.log_prob[static_cast<Eigen::Index>(w)] << '\n';
  }
  os << std::defaultfloat << st.rng << '\n';
  if (!os) throw Error("failed to write sampler checkpoint");
}

inline EnsembleState load_checkpoint(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "firecal-aies-checkpoint" || version != 1)
    throw ConfigError("not a sampler checkpoint");
  std::size_t nw = 0, dim = 0;
  EnsembleState st;
  if (!(is >> nw >> dim >> st.step >> st.accepted >> st.proposed)) throw ConfigError("corrupt sampler checkpoint");
  st.positions.resize(static_cast<Eigen::Index>(nw), static_cast<Eigen::Index>(dim));
  st.log_prob.resize(static_cast<Eigen::Index>(nw));
  auto read_double = [&](double& v) {
    std::string tok;
    if (!(is >> tok)) throw ConfigError("corrupt sampler checkpoint");
    v = std::strtod(tok.c_str(), nullptr);
  };
  for (std::size_t w = 0; w < nw; ++w) {
    for (std::size_t k = 0; k < dim; ++k) read_double(st.positions(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k)));
    read_double(st.log_prob[static_cast<Eigen::Index>(w)]);
  }
  if (!(is >> st.rng)) throw ConfigError("corrupt sampler checkpoint (rng state)");
  return st;
}

}  // namespace firecal::aies
