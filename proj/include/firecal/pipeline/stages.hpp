#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "firecal/aies.hpp"
#include "firecal/bayes.hpp"
#include "firecal/heat_solver.hpp"
#include "firecal/pipeline/config.hpp"
#include "firecal/pipeline/io.hpp"
#include "firecal/sensitivity.hpp"
#include "firecal/surrogate.hpp"

namespace firecal::pipeline {

/// Files of one run directory.
struct RunPaths {
  fs::path dir;

  fs::path design() const { return dir / "design.csv"; }
  fs::path surrogate() const { return dir / "surrogate.fcsm"; }
  fs::path chain() const { return dir / "chain.bin"; }
  fs::path samples() const { return dir / "posterior_samples.csv"; }
  fs::path summary() const { return dir / "posterior_summary.csv"; }
  fs::path map() const { return dir / "map.json"; }
  fs::path predictive() const { return dir / "predictive.csv"; }
  fs::path snapshots() const { return dir / "predictive_snapshots.csv"; }
  fs::path calibration() const { return dir / "calibration.json"; }
  fs::path sobol() const { return dir / "sobol.csv"; }
  fs::path simulation() const { return dir / "simulation.csv"; }
  fs::path prediction() const { return dir / "prediction.csv"; }
  fs::path validation_band() const { return dir / "validation_band.csv"; }
  fs::path validation_snapshots() const { return dir / "validation_snapshots.csv"; }
  fs::path validation() const { return dir / "validation.json"; }
  fs::path report_dir() const { return dir / "report"; }
};

// ---------------------------------------------------------------------------
// Forward model and stage hashes

/// FE model of a configured layup: six material parameters to the sensor
/// series, concatenated in layup sensor order.
inline surrogate::ForwardModel forward_model(const RunConfig& c) {
  return [layup = c.layup, bc = c.boundary, grid = c.grid](std::span<const double> x) {
    const auto p = MaterialParams::from_range(x);
    const auto res = simulate(p, layup, bc, grid);
    const auto n = static_cast<Eigen::Index>(grid.n_steps);
    Eigen::VectorXd y(n * static_cast<Eigen::Index>(res.sensors.size()));
    for (std::size_t s = 0; s < res.sensors.size(); ++s)
      y.segment(static_cast<Eigen::Index>(s) * n, n) = Eigen::Map<const Eigen::VectorXd>(res.sensors[s].data(), n);
    return y;
  };
}

inline std::string physics_hash(const RunConfig& c) {
  const json r = resolved(c);
  return Hasher().add("physics").add(r["grid"].dump()).add(r["boundary"].dump()).add(r["layup"].dump()).hex();
}

inline std::string design_hash(const RunConfig& c) {
  Hasher h;
  h.add("design").add(std::uint64_t{kSchemaVersion}).add(physics_hash(c)).add(std::uint64_t{c.surrogate.k});
  h.add(stage_seed(c.seed, "design"));
  const auto box = c.model_box();
  for (std::size_t i = 0; i < box.dim(); ++i) h.add(box.lower[i]).add(box.upper[i]);
  return h.hex();
}

inline std::string train_hash(const RunConfig& c) {
  const auto& t = c.surrogate.train;
  return Hasher()
      .add("train")
      .add(std::uint64_t{kSchemaVersion})
      .add(design_hash(c))
      .add(t.epsilon0)
      .add(static_cast<std::uint64_t>(t.min_degree))
      .add(static_cast<std::uint64_t>(t.max_degree))
      .hex();
}

inline std::string chain_hash(const RunConfig& c) {
  if (!c.measurements) throw ConfigError("missing config key 'measurements'");
  Hasher h;
  h.add("chain").add(std::uint64_t{kSchemaVersion}).add(train_hash(c)).add(file_hash(*c.measurements));
  h.add(stage_seed(c.seed, "aies")).add(std::uint64_t{c.sampler.walkers}).add(std::uint64_t{c.sampler.steps});
  h.add(c.sampler.a).add(c.sampler.burn_in);
  for (std::size_t i = 0; i < c.prior.dim(); ++i) h.add(c.prior.lower[i]).add(c.prior.upper[i]);
  return h.hex();
}

inline std::string calibration_hash(const RunConfig& c) {
  Hasher h;
  h.add("calibration").add(std::uint64_t{kSchemaVersion}).add(chain_hash(c)).add(c.surrogate.eta_threshold);
  h.add(std::uint64_t{c.predictive_draws});
  for (double s : c.snapshots) h.add(s);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Stage: experimental design

inline std::vector<std::string> response_columns(const Layup& layup, std::size_t n_steps) {
  std::vector<std::string> cols;
  for (auto s : layup.sensors)
    for (std::size_t i = 0; i < n_steps; ++i) cols.push_back("s" + std::to_string(s) + "_" + std::to_string(i));
  return cols;
}

inline void write_design(const fs::path& p, const surrogate::ExperimentalDesign& d, const RunConfig& c,
                         const std::string& hash) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line("design", hash);
    os << "# sampling=" << d.sampling << " seed=" << d.seed << '\n';
    std::vector<std::string> cols;
    for (std::size_t i = 0; i < bayes::kModelDim; ++i) cols.emplace_back(kMaterialRanges[i].name);
    const auto rc = response_columns(c.layup, c.grid.n_steps);
    cols.insert(cols.end(), rc.begin(), rc.end());
    os << join(cols) << '\n';
    std::vector<double> row;
    for (Eigen::Index i = 0; i < d.points.rows(); ++i) {
      row.assign(d.points.row(i).begin(), d.points.row(i).end());
      row.insert(row.end(), d.responses.row(i).begin(), d.responses.row(i).end());
      write_row(os, row);
    }
  });
}

inline surrogate::ExperimentalDesign read_design(const fs::path& p, const RunConfig& c) {
  const Table t = read_table(p);
  const std::size_t m = bayes::kModelDim, n = c.n_sensors() * c.grid.n_steps;
  if (t.columns.size() != m + n) throw ConfigError(p.string() + ": column count does not match the configuration");
  surrogate::ExperimentalDesign d;
  d.sampling = "lhs";
  d.seed = stage_seed(c.seed, "design");
  d.points.resize(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(m));
  d.responses.resize(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    for (std::size_t j = 0; j < m; ++j) d.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
    for (std::size_t j = 0; j < n; ++j) d.responses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][m + j];
  }
  return d;
}

/// Builds and evaluates the Latin-hypercube design, or reuses a cached one.
inline surrogate::ExperimentalDesign run_design(const RunConfig& c, const RunPaths& paths, std::ostream& log) {
  const auto hash = design_hash(c);
  if (is_fresh(paths.design(), hash)) {
    log << "design: cached " << paths.design().string() << '\n';
    return read_design(paths.design(), c);
  }
  log << "design: " << c.surrogate.k << " FE runs on " << c.threads << " thread(s)\n";
  auto d = surrogate::build_design(c.model_box(), c.surrogate.k, stage_seed(c.seed, "design"));
  surrogate::evaluate_design(d, forward_model(c), c.threads);
  write_design(paths.design(), d, c, hash);
  return d;
}

// ---------------------------------------------------------------------------
// Stage: surrogate training

inline void write_surrogate(const fs::path& p, const surrogate::SurrogateModel& m, const std::string& hash) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line("surrogate", hash);
    surrogate::save(m, os);
  });
}

inline surrogate::SurrogateModel read_surrogate(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("missing surrogate " + p.string() + " (run the train stage first)");
  std::string line;
  std::getline(in, line);
  if (!parse_header(line)) throw ConfigError(p.string() + ": missing artifact header");
  return surrogate::load(in);
}

inline surrogate::SurrogateModel run_train(const RunConfig& c, const RunPaths& paths, std::ostream& log) {
  const auto hash = train_hash(c);
  if (is_fresh(paths.surrogate(), hash)) {
    log << "train: cached " << paths.surrogate().string() << '\n';
    return read_surrogate(paths.surrogate());
  }
  const auto terms = pce::total_degree_size(bayes::kModelDim, static_cast<int>(c.surrogate.train.min_degree));
  if (terms >= c.surrogate.k) {
    std::ostringstream os;
    os << "a design of K = " << c.surrogate.k << " points cannot fit a degree-" << c.surrogate.train.min_degree
       << " expansion (" << terms << " terms); enrich the experimental design (increase surrogate.k) and retrain";
    throw GateError(std::numeric_limits<double>::infinity(), c.surrogate.eta_threshold, os.str());
  }
  const auto design = run_design(c, paths, log);
  auto m = surrogate::train(design, c.model_box(), c.surrogate.train, c.layout());
  log << "train: N' = " << m.n_components() << ", eta = " << m.eta << '\n';
  write_surrogate(paths.surrogate(), m, hash);
  return m;
}

/// Throws GateError when the surrogate error estimate exceeds the threshold.
inline void check_gate(const surrogate::SurrogateModel& m, double threshold) {
  if (m.eta > threshold) {
    std::ostringstream os;
    os << "surrogate error estimate " << m.eta << " exceeds the threshold " << threshold
       << "; enrich the experimental design (increase surrogate.k) and retrain";
    throw GateError(m.eta, threshold, os.str());
  }
}

// ---------------------------------------------------------------------------
// Posterior statistics

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ParameterSummary {
  std::string name;
  double map = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double cov = 0.0;  // sd / |mean|
  double lower = 0.0;
  double upper = 0.0;
  double prior_sd = 0.0;
};

inline std::vector<ParameterSummary> summarize(const Eigen::MatrixXd& samples, const Eigen::VectorXd& map,
                                               const bayes::PriorSpec& prior) {
  std::vector<ParameterSummary> out;
  const auto n = samples.rows();
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    ParameterSummary s;
    s.name = prior.names[static_cast<std::size_t>(k)];
    s.map = map[k];
    const Eigen::VectorXd col = samples.col(k);
    s.mean = col[0] + (col.array() - col[0]).mean();
    s.sd = n > 1 ? std::sqrt((col.array() - s.mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
    s.cov = s.mean != 0.0 ? s.sd / std::abs(s.mean) : std::numeric_limits<double>::quiet_NaN();
    std::vector<double> v(col.data(), col.data() + n);
    s.lower = quantile(v, 0.025);
    s.upper = quantile(std::move(v), 0.975);
    s.prior_sd = prior.stddev(static_cast<std::size_t>(k));
    out.push_back(s);
  }
  return out;
}

/// Per-output mean, standard deviation and central 95 % band of a set of draws.
struct Band {
  Eigen::VectorXd mean, sd, lower, upper;
};

inline Band band_of(const std::vector<Eigen::VectorXd>& draws) {
  const auto n = draws.front().size();
  const auto m = static_cast<double>(draws.size());
  Band b{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  std::vector<double> v(draws.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < draws.size(); ++d) v[d] = draws[d][i];
    // Shifted by the first draw so a constant column has an exact mean.
    double shift = 0.0;
    for (double x : v) shift += x - v.front();
    const double mean = v.front() + shift / m;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    b.mean[i] = mean;
    b.sd[i] = draws.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    b.lower[i] = quantile(v, 0.025);
    b.upper[i] = quantile(v, 0.975);
  }
  return b;
}

/// Fraction of data points inside the band.
inline double coverage(const Band& b, const Eigen::VectorXd& data) {
  Eigen::Index in = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    if (data[i] >= b.lower[i] && data[i] <= b.upper[i]) ++in;
  return data.size() ? static_cast<double>(in) / static_cast<double>(data.size()) : 0.0;
}

inline void write_band(const fs::path& p, const std::string& kind, const std::string& hash, const Band& b,
                       const std::vector<std::size_t>& sensors, const SimulationGrid& grid,
                       const std::optional<Eigen::VectorXd>& data) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line(kind, hash);
    os << "time,interface,mean,sd,lower,upper" << (data ? ",data" : "") << '\n';
    const auto n = static_cast<Eigen::Index>(grid.n_steps);
    for (std::size_t s = 0; s < sensors.size(); ++s)
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(s) * n + i;
        std::vector<double> row{grid.time(static_cast<std::size_t>(i)), static_cast<double>(sensors[s]), b.mean[r],
                                b.sd[r], b.lower[r], b.upper[r]};
        if (data) row.push_back((*data)[r]);
        write_row(os, row);
      }
  });
}

/// Snapshot table (interface, time, mean, sd) at the requested times.
inline void write_snapshots(const fs::path& p, const std::string& kind, const std::string& hash, const Band& b,
                            const std::vector<std::size_t>& sensors, const SimulationGrid& grid,
                            const std::vector<double>& times) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line(kind, hash);
    os << "interface,time,mean,sd\n";
    const auto n = static_cast<Eigen::Index>(grid.n_steps);
    for (std::size_t s = 0; s < sensors.size(); ++s)
      for (double t : times) {
        const double idx = t / grid.tau;
        const auto i = static_cast<Eigen::Index>(std::llround(idx));
        if (std::abs(idx - static_cast<double>(i)) > 1e-9 || i < 0 || i >= n)
          throw ConfigError("snapshot time " + fmt(t) + " s is not on the output grid");
        const auto r = static_cast<Eigen::Index>(s) * n + i;
        write_row(os, std::vector<double>{static_cast<double>(sensors[s]), t, b.mean[r], b.sd[r]});
      }
  });
}

// ---------------------------------------------------------------------------
// Chain persistence: artifact header line, then little-endian binary
//   u64 first_step | u64 walkers | u64 dim | u64 steps | f64 acceptance |
//   f64 positions[steps*walkers*dim] | f64 log_prob[steps*walkers]

inline void write_chain(const fs::path& p, const aies::RunResult& r, const std::string& hash) {
  write_atomic(p, [&](std::ostream& os) {
    using namespace surrogate::io;
    os << header_line("chain", hash);
    put(os, std::uint64_t{r.chain.first_step});
    put(os, std::uint64_t{r.chain.n_walkers});
    put(os, std::uint64_t{r.chain.dim});
    put(os, std::uint64_t{r.chain.n_steps()});
    put(os, r.acceptance_rate);
    put_doubles(os, r.chain.positions.data(), r.chain.positions.size());
    put_doubles(os, r.chain.log_prob.data(), r.chain.log_prob.size());
  });
}

inline aies::RunResult read_chain(const fs::path& p, double burn_in, std::size_t n_steps) {
  using namespace surrogate::io;
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("missing chain " + p.string());
  std::string line;
  std::getline(in, line);
  if (!parse_header(line)) throw ConfigError(p.string() + ": missing artifact header");
  aies::RunResult r;
  r.chain.first_step = get<std::uint64_t>(in);
  r.chain.n_walkers = get_count(in, 1 << 20);
  r.chain.dim = get_count(in, 64);
  const auto steps = get_count(in, std::uint64_t{1} << 28);
  r.acceptance_rate = get<double>(in);
  r.chain.positions.resize(steps * r.chain.n_walkers * r.chain.dim);
  r.chain.log_prob.resize(steps * r.chain.n_walkers);
  get_doubles(in, r.chain.positions.data(), r.chain.positions.size());
  get_doubles(in, r.chain.log_prob.data(), r.chain.log_prob.size());
  r.burn_in_steps = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(n_steps)));
  const std::size_t skip = r.burn_in_steps > r.chain.first_step ? r.burn_in_steps - r.chain.first_step : 0;
  r.autocorr_time = aies::autocorrelation_time(r.chain, skip);
  return r;
}

// ---------------------------------------------------------------------------
// Stage: calibration

struct CalibrationResult {
  surrogate::SurrogateModel model;
  aies::RunResult run;
  Eigen::MatrixXd samples;  // post burn-in, 14 columns
  Eigen::VectorXd log_post;
  Eigen::VectorXd map;
  std::vector<ParameterSummary> summary;
  Band predictive;
  double coverage = 0.0;
};

inline bayes::ModelFn surrogate_model_fn(const surrogate::SurrogateModel& m) {
  return [&m](std::span<const double> x) { return surrogate::predict(m, x.first(bayes::kModelDim)); };
}

inline std::vector<double> grid_times(const SimulationGrid& g) { return g.times(); }

inline bayes::MeasurementSet load_measurements(const RunConfig& c) {
  if (!c.measurements) throw ConfigError("missing config key 'measurements'");
  auto data = ingest_measurements(*c.measurements, grid_times(c.grid));
  if (static_cast<std::size_t>(data.n_sensors()) != c.n_sensors())
    throw ConfigError(c.measurements->string() + ": " + std::to_string(data.n_sensors()) +
                      " sensor columns, layup declares " + std::to_string(c.n_sensors()));
  return data;
}

inline void write_samples(const fs::path& p, const std::string& hash, const Eigen::MatrixXd& s,
                          const Eigen::VectorXd& lp, const bayes::PriorSpec& prior) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line("posterior_samples", hash);
    os << join(prior.names) << ",log_post\n";
    std::vector<double> row;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      row.assign(s.row(i).begin(), s.row(i).end());
      row.push_back(lp[i]);
      write_row(os, row);
    }
  });
}

/// Posterior sample table as written by the calibration stage.
inline Eigen::MatrixXd read_samples(const fs::path& p, Eigen::VectorXd* lp = nullptr) {
  if (!fs::exists(p)) throw ConfigError("missing posterior samples " + p.string() + " (run calibrate first)");
  const Table t = read_table(p);
  if (t.columns.size() != bayes::kFullDim + 1 || t.columns.back() != "log_post")
    throw ConfigError(p.string() + ": expected " + std::to_string(bayes::kFullDim) +
                      " parameter columns and log_post, found " + std::to_string(t.columns.size()) + " columns");
  Eigen::MatrixXd s(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(bayes::kFullDim));
  if (lp) lp->resize(s.rows());
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    for (std::size_t k = 0; k < bayes::kFullDim; ++k) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.rows[i][k];
    if (lp) (*lp)[static_cast<Eigen::Index>(i)] = t.rows[i].back();
  }
  return s;
}

inline void write_summary(const fs::path& p, const std::string& hash, const std::vector<ParameterSummary>& s) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line("posterior_summary", hash);
    os << "parameter,map,mean,sd,cov,lower95,upper95,prior_sd\n";
    for (const auto& r : s)
      os << r.name << ',' << fmt(r.map) << ',' << fmt(r.mean) << ',' << fmt(r.sd) << ',' << fmt(r.cov) << ','
         << fmt(r.lower) << ',' << fmt(r.upper) << ',' << fmt(r.prior_sd) << '\n';
  });
}

inline void write_json(const fs::path& p, json j) {
  write_atomic(p, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("missing " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline json map_json(const Eigen::VectorXd& map, double lp, const bayes::PriorSpec& prior, const std::string& hash) {
  json j{{"kind", "map"}, {"schema", kSchemaVersion}, {"input_hash", hash}, {"log_post", lp}};
  for (std::size_t k = 0; k < prior.dim(); ++k) j[prior.names[k]] = map[static_cast<Eigen::Index>(k)];
  return j;
}

/// Design, training with the accuracy gate, AIES, MAP and the posterior
/// predictive band on the calibration setup. Every artifact lands in `paths.dir`.
inline CalibrationResult run_calibrate(const RunConfig& c, const RunPaths& paths, std::ostream& log) {
  const auto data = load_measurements(c);
  CalibrationResult res;
  res.model = run_train(c, paths, log);
  check_gate(res.model, c.surrogate.eta_threshold);
  if (res.model.n_outputs() != data.values.size())
    throw ConfigError("surrogate output length does not match the measurements");

  const auto model = surrogate_model_fn(res.model);
  const aies::LogTarget target = [&](std::span<const double> x) { return bayes::log_posterior(x, data, model, c.prior); };
  aies::SamplerConfig sc;
  sc.n_walkers = c.sampler.walkers;
  sc.n_steps = c.sampler.steps;
  sc.a = c.sampler.a;
  sc.burn_in = c.sampler.burn_in;
  sc.seed = stage_seed(c.seed, "aies");
  const auto chash = chain_hash(c);
  if (is_fresh(paths.chain(), chash)) {
    log << "calibrate: cached " << paths.chain().string() << '\n';
    res.run = read_chain(paths.chain(), sc.burn_in, sc.n_steps);
  } else {
    log << "calibrate: AIES with " << sc.n_walkers << " walkers, " << sc.n_steps << " sweeps\n";
    auto state = aies::init_from_prior(c.prior, sc.n_walkers, sc.seed, target);
    res.run = aies::run(target, state, sc);
    write_chain(paths.chain(), res.run, chash);
  }
  res.samples = res.run.post_burn_in(&res.log_post);
  if (res.samples.rows() == 0) throw SamplerError("no samples after burn-in");
  res.map = bayes::map_estimate(res.samples, res.log_post);
  res.summary = summarize(res.samples, res.map, c.prior);

  const auto hash = calibration_hash(c);
  bayes::CovarianceCache cache(64);
  const auto draws = bayes::posterior_predictive_sample(res.samples, model, data.times, data.n_sensors(), std::nullopt,
                                                        c.predictive_draws, stage_seed(c.seed, "predictive"), &cache);
  std::vector<Eigen::VectorXd> values;
  for (const auto& d : draws) values.push_back(d.values);
  res.predictive = band_of(values);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.values.data(), data.values.size());
  res.coverage = coverage(res.predictive, y);

  Eigen::Index best = 0;
  res.log_post.maxCoeff(&best);
  write_samples(paths.samples(), hash, res.samples, res.log_post, c.prior);
  write_summary(paths.summary(), hash, res.summary);
  write_json(paths.map(), map_json(res.map, res.log_post[best], c.prior, hash));
  write_band(paths.predictive(), "predictive", hash, res.predictive, c.layup.sensors, c.grid, y);
  write_snapshots(paths.snapshots(), "predictive_snapshots", hash, res.predictive, c.layup.sensors, c.grid,
                  c.snapshots);
  json info{{"kind", "calibration"},
            {"schema", kSchemaVersion},
            {"input_hash", hash},
            {"name", c.name},
            {"eta", res.model.eta},
            {"eta_threshold", c.surrogate.eta_threshold},
            {"n_components", res.model.n_components()},
            {"degrees", res.model.degrees},
            {"acceptance_rate", res.run.acceptance_rate},
            {"autocorr_time", res.run.autocorr_time},
            {"burn_in_steps", res.run.burn_in_steps},
            {"n_samples", res.samples.rows()},
            {"predictive_coverage", res.coverage},
            {"measurements", c.measurements->filename().string()}};
  for (auto& v : info["autocorr_time"])
    if (v.is_null()) v = "nan";
  write_json(paths.calibration(), info);
  log << "calibrate: acceptance " << res.run.acceptance_rate << ", predictive coverage " << res.coverage << '\n';
  return res;
}

// ---------------------------------------------------------------------------
// Stage: Sobol' indices and surrogate prediction

inline sensitivity::TimeSeriesIndices run_sobol(const RunConfig& c, const fs::path& surrogate_path,
                                                const RunPaths& paths) {
  const auto m = read_surrogate(surrogate_path);
  const auto idx = sensitivity::total_sobol_timeseries(m);
  const auto hash = Hasher().add("sobol").add(file_hash(surrogate_path)).hex();
  const auto n = static_cast<Eigen::Index>(m.layout.n_steps);
  const auto sensors = c.layup.sensors;
  if (static_cast<Eigen::Index>(sensors.size()) * n != m.n_outputs())
    throw ConfigError("surrogate output length does not match the configured layup");
  write_atomic(paths.sobol(), [&](std::ostream& os) {
    os << header_line("sobol", hash);
    os << "time,interface";
    for (std::size_t i = 0; i < bayes::kModelDim; ++i) os << ',' << kMaterialRanges[i].name;
    os << '\n';
    for (std::size_t s = 0; s < sensors.size(); ++s)
      for (Eigen::Index t = 0; t < n; ++t) {
        const auto r = static_cast<Eigen::Index>(s) * n + t;
        std::vector<double> row{static_cast<double>(t) * m.layout.tau, static_cast<double>(sensors[s])};
        for (Eigen::Index i = 0; i < idx.total.rows(); ++i) row.push_back(idx.total(i, r));
        write_row(os, row);
      }
  });
  return idx;
}

inline void write_series(const fs::path& p, const std::string& kind, const std::string& hash,
                         const Eigen::VectorXd& y, const std::vector<std::size_t>& sensors, const SimulationGrid& grid) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line(kind, hash);
    os << "time";
    for (auto s : sensors) os << ",sensor_" << s;
    os << '\n';
    const auto n = static_cast<Eigen::Index>(grid.n_steps);
    std::vector<double> row;
    for (Eigen::Index i = 0; i < n; ++i) {
      row.assign(1, grid.time(static_cast<std::size_t>(i)));
      for (std::size_t s = 0; s < sensors.size(); ++s) row.push_back(y[static_cast<Eigen::Index>(s) * n + i]);
      write_row(os, row);
    }
  });
}

inline std::string params_hash(const MaterialParams& p) {
  Hasher h;
  for (double v : p.to_array()) h.add(v);
  return h.hex();
}

/// Surrogate prediction at one parameter point.
inline Eigen::VectorXd run_predict(const RunConfig& c, const MaterialParams& p, const fs::path& surrogate_path,
                                   const RunPaths& paths) {
  const auto m = read_surrogate(surrogate_path);
  const auto a = p.to_array();
  const auto y = surrogate::predict(m, a);
  if (static_cast<std::size_t>(y.size()) != c.n_sensors() * c.grid.n_steps)
    throw ConfigError("surrogate output length does not match the configured layup and grid");
  const auto hash = Hasher().add("predict").add(file_hash(surrogate_path)).add(params_hash(p)).hex();
  write_series(paths.prediction(), "prediction", hash, y, c.layup.sensors, c.grid);
  return y;
}

/// Reads parameters from a JSON object with keys x1..x6 (extra keys ignored).
inline MaterialParams read_params(const fs::path& p) {
  return detail::params_from_json(read_json(p), p.filename().string() + ": ");
}

// ---------------------------------------------------------------------------
// Stage: direct simulation

/// FE run at `p`; with a discrepancy, one zero-mean Gaussian draw per sensor is
/// added, which is how synthetic measurements are produced.
inline Eigen::VectorXd run_simulate(const RunConfig& c, const MaterialParams& p,
                                    const std::optional<bayes::DiscrepancyParams>& noise, const RunPaths& paths) {
  Eigen::VectorXd y = forward_model(c)(p.to_array());
  Hasher h;
  h.add("simulate").add(physics_hash(c)).add(params_hash(p));
  if (noise) {
    const auto times = grid_times(c.grid);
    const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
    const Eigen::MatrixXd cov = bayes::build_covariance(*noise, t);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw DomainError("discrepancy covariance is not positive definite");
    std::mt19937_64 rng(stage_seed(c.seed, "simulate"));
    std::normal_distribution<double> normal;
    const auto n = t.size();
    Eigen::VectorXd xi(n);
    for (std::size_t s = 0; s < c.n_sensors(); ++s) {
      for (Eigen::Index i = 0; i < n; ++i) xi[i] = normal(rng);
      y.segment(static_cast<Eigen::Index>(s) * n, n) += llt.matrixL() * xi;
    }
    h.add(stage_seed(c.seed, "simulate"));
    for (double v : noise->varpi) h.add(v);
    h.add(noise->theta);
  }
  write_series(paths.simulation(), "simulation", h.hex(), y, c.layup.sensors, c.grid);
  return y;
}

// ---------------------------------------------------------------------------
// Stage: cross-setup validation

struct ValidationResult {
  Band band;
  std::optional<double> coverage;
  std::size_t draws = 0;
};

/// Pushes the posterior of this run through the layup of the validation
/// config with the fixed discrepancy override, using the FE model.
inline ValidationResult run_validate(const RunConfig& c, const RunPaths& paths, std::ostream& log) {
  if (!c.validation) throw ConfigError("missing config key 'validation'");
  const auto& vs = *c.validation;
  const RunConfig target = load_config(vs.config);
  if (target.layup.param_slots() != c.layup.param_slots())
    throw ConfigError("validation setup expects a different number of calibrated parameter sets");
  const Eigen::MatrixXd samples = read_samples(paths.samples());
  const auto times = grid_times(target.grid);
  const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
  const auto ns = static_cast<Eigen::Index>(target.n_sensors());
  const auto n_out = ns * t.size();
  const std::uint64_t seed = stage_seed(c.seed, "validate");

  // First pass records which posterior rows get drawn; the FE runs for those
  // rows are then spread over the worker threads and replayed in order.
  std::vector<std::vector<double>> picked;
  bayes::ModelFn record = [&](std::span<const double> x) {
    picked.emplace_back(x.begin(), x.end());
    return Eigen::VectorXd::Zero(n_out).eval();
  };
  bayes::CovarianceCache cache(4);
  bayes::posterior_predictive_sample(samples, record, t, ns, vs.discrepancy, vs.draws, seed, &cache);
  std::map<std::vector<double>, Eigen::Index> unique;
  for (const auto& x : picked) unique.emplace(x, 0);
  surrogate::ExperimentalDesign runs;
  runs.points.resize(static_cast<Eigen::Index>(unique.size()), static_cast<Eigen::Index>(bayes::kModelDim));
  Eigen::Index r = 0;
  for (auto& [x, row] : unique) {
    row = r;
    for (std::size_t k = 0; k < bayes::kModelDim; ++k) runs.points(r, static_cast<Eigen::Index>(k)) = x[k];
    ++r;
  }
  log << "validate: " << unique.size() << " FE runs for " << vs.draws << " predictive draws\n";
  surrogate::evaluate_design(runs, forward_model(target), c.threads);
  bayes::ModelFn replay = [&](std::span<const double> x) {
    const auto it = unique.find(std::vector<double>(x.begin(), x.end()));
    return Eigen::VectorXd(runs.responses.row(it->second).transpose());
  };
  const auto draws = bayes::posterior_predictive_sample(samples, replay, t, ns, vs.discrepancy, vs.draws, seed, &cache);
  std::vector<Eigen::VectorXd> values;
  for (const auto& d : draws) values.push_back(d.values);

  ValidationResult res;
  res.draws = draws.size();
  res.band = band_of(values);
  std::optional<Eigen::VectorXd> y;
  if (target.measurements) {
    const auto data = load_measurements(target);
    y = Eigen::Map<const Eigen::VectorXd>(data.values.data(), data.values.size());
    res.coverage = coverage(res.band, *y);
  }
  Hasher h;
  h.add("validate").add(file_hash(paths.samples())).add(physics_hash(target)).add(seed).add(std::uint64_t{vs.draws});
  for (double v : vs.discrepancy.varpi) h.add(v);
  h.add(vs.discrepancy.theta);
  if (target.measurements) h.add(file_hash(*target.measurements));
  const auto hash = h.hex();
  write_band(paths.validation_band(), "validation_band", hash, res.band, target.layup.sensors, target.grid, y);
  write_snapshots(paths.validation_snapshots(), "validation_snapshots", hash, res.band, target.layup.sensors,
                  target.grid, c.snapshots);
  json info{{"kind", "validation"},
            {"schema", kSchemaVersion},
            {"input_hash", hash},
            {"target", target.name},
            {"draws", res.draws},
            {"discrepancy", detail::discrepancy_to_json(vs.discrepancy)}};
  if (res.coverage) info["coverage"] = *res.coverage;
  write_json(paths.validation(), info);
  if (res.coverage) log << "validate: band coverage " << *res.coverage << '\n';
  return res;
}

}  // namespace firecal::pipeline
