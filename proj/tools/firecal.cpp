// firecal: calibration workflow for effective material properties of boards
// under standard fire exposure.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
// 4 surrogate accuracy gate not met.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "firecal/pipeline/report.hpp"

namespace {

using namespace firecal;
using namespace firecal::pipeline;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitGate = 4;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::optional<unsigned> threads;
};

RunConfig load(const Globals& g) {
  RunConfig c = load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = std::max(1u, *g.threads);
  return c;
}

MaterialParams params_for(const RunConfig& c, const RunPaths& paths, const std::string& spec) {
  if (spec == "map") return read_params(paths.map());
  if (!spec.empty()) return read_params(spec);
  if (c.parameters) return *c.parameters;
  throw ConfigError("missing config key 'parameters' (or pass --params)");
}

bayes::DiscrepancyParams parse_discrepancy(const std::string& s) {
  std::vector<double> v(bayes::kModelDim, 0.0);
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(parse_double(tok, "--discrepancy"));
  if (v.size() != bayes::kFullDim) throw ConfigError("--discrepancy expects 8 comma-separated values: varpi0..varpi6,theta");
  return bayes::DiscrepancyParams::from_full(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian calibration of effective thermal properties with a PCA/PCE surrogate"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_option("--out-dir", g.out_dir, "run directory for artifacts")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads for FE runs");

  std::string params, discrepancy, surrogate_path;
  auto* simulate = app.add_subcommand("simulate", "run the FE model once and write the sensor series");
  simulate->add_option("--params", params, "JSON file with x1..x6, or 'map' for the run's MAP estimate");
  simulate->add_option("--discrepancy", discrepancy, "add a discrepancy draw: varpi0..varpi6,theta");
  auto* design = app.add_subcommand("design", "build and evaluate the experimental design");
  auto* train = app.add_subcommand("train", "train the PCA/PCE surrogate");
  auto* calibrate = app.add_subcommand("calibrate", "full calibration: design, train, sample, summarize");
  auto* sobol = app.add_subcommand("sobol", "time-dependent total Sobol' indices from the surrogate");
  sobol->add_option("--surrogate", surrogate_path, "surrogate file (default: <out-dir>/surrogate.fcsm)");
  auto* predict = app.add_subcommand("predict", "surrogate prediction at one parameter point");
  predict->add_option("--params", params, "JSON file with x1..x6, or 'map'");
  predict->add_option("--surrogate", surrogate_path, "surrogate file (default: <out-dir>/surrogate.fcsm)");
  auto* validate = app.add_subcommand("validate", "posterior predictive on the validation setup");
  auto* report = app.add_subcommand("report", "collate a completed run into report/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const RunConfig c = load(g);
    const RunPaths paths{g.out_dir};
    fs::create_directories(paths.dir);
    const fs::path surrogate_file = surrogate_path.empty() ? paths.surrogate() : fs::path(surrogate_path);
    std::ostream& log = std::cerr;

    if (*simulate) {
      std::optional<bayes::DiscrepancyParams> noise;
      if (!discrepancy.empty()) noise = parse_discrepancy(discrepancy);
      run_simulate(c, params_for(c, paths, params), noise, paths);
      log << "wrote " << paths.simulation().string() << '\n';
    } else if (*design) {
      run_design(c, paths, log);
    } else if (*train) {
      const auto m = run_train(c, paths, log);
      std::cout << "eta " << m.eta << '\n';
    } else if (*calibrate) {
      const auto r = run_calibrate(c, paths, log);
      std::cout << "eta " << r.model.eta << "\nacceptance " << r.run.acceptance_rate << "\ncoverage " << r.coverage
                << '\n';
    } else if (*sobol) {
      if (!fs::exists(surrogate_file))
        throw ConfigError("missing surrogate " + surrogate_file.string() + " (run train first)");
      run_sobol(c, surrogate_file, paths);
      log << "wrote " << paths.sobol().string() << '\n';
    } else if (*predict) {
      if (!fs::exists(surrogate_file))
        throw ConfigError("missing surrogate " + surrogate_file.string() + " (run train first)");
      run_predict(c, params_for(c, paths, params), surrogate_file, paths);
      log << "wrote " << paths.prediction().string() << '\n';
    } else if (*validate) {
      const auto r = run_validate(c, paths, log);
      if (r.coverage) std::cout << "coverage " << *r.coverage << '\n';
    } else if (*report) {
      for (const auto& f : run_report(c, paths)) log << "wrote report/" << f.name << '\n';
    }
    return 0;
  } catch (const GateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitGate;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}
