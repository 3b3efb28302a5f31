#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "firecal/bayes.hpp"
#include "firecal/error.hpp"
#include "firecal/heat_solver.hpp"
#include "firecal/pipeline/io.hpp"
#include "firecal/surrogate.hpp"
#include "json.hpp"

namespace firecal::pipeline {

using json = nlohmann::json;

struct SurrogateSettings {
  std::size_t k = 1000;
  surrogate::TrainOptions train;
  double eta_threshold = 0.05;
};

struct SamplerSettings {
  std::size_t walkers = 28;
  std::size_t steps = 2000;
  double a = 2.0;
  double burn_in = 0.5;
};

/// Cross-setup prediction: the posterior of this run pushed through another layup.
struct ValidationSettings {
  fs::path config;
  bayes::DiscrepancyParams discrepancy = bayes::DiscrepancyParams::constant(10.0, 30.0);
  std::size_t draws = 500;
};

struct RunConfig {
  fs::path source;
  std::string name = "run";
  std::uint64_t seed = 1;
  unsigned threads = 1;
  SimulationGrid grid;
  BoundaryConfig boundary;
  Layup layup;
  json layup_json;  // resolved layer definitions, kept for hashing
  bayes::PriorSpec prior = bayes::PriorSpec::defaults();
  SurrogateSettings surrogate;
  SamplerSettings sampler;
  std::optional<fs::path> measurements;
  std::optional<MaterialParams> parameters;
  std::vector<double> snapshots{1200.0, 1800.0};
  std::size_t predictive_draws = 1000;
  std::optional<ValidationSettings> validation;

  std::size_t n_sensors() const { return layup.sensors.size(); }
  pce::InputTransform model_box() const {
    return {std::vector<double>(prior.lower.begin(), prior.lower.begin() + bayes::kModelDim),
            std::vector<double>(prior.upper.begin(), prior.upper.begin() + bayes::kModelDim)};
  }
  surrogate::OutputLayout layout() const { return {n_sensors(), grid.n_steps, grid.tau}; }
};

namespace detail {

inline const json& req(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("missing config key '" + path + key + "'");
  return j.at(key);
}

template <class T>
T get(const json& j, const std::string& key, const std::string& path) {
  try {
    return req(j, key, path).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + key + "': " + e.what());
  }
}

template <class T>
T get_or(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get<T>(j, key, path);
}

inline PiecewiseLinear curve_from(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError("config key '" + path + "' must be a list of [T, value] pairs");
  std::vector<CurvePoint> pts;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ConfigError("config key '" + path + "' must be a list of [T, value] pairs");
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  try {
    return PiecewiseLinear(std::move(pts));
  } catch (const DomainError& e) {
    throw ConfigError("config key '" + path + "': " + e.what());
  }
}

inline json params_to_json(const MaterialParams& p) {
  const auto a = p.to_array();
  json j;
  for (std::size_t i = 0; i < a.size(); ++i) j[kMaterialRanges[i].name] = a[i];
  return j;
}

inline MaterialParams params_from_json(const json& j, const std::string& path) {
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = get<double>(j, kMaterialRanges[i].name, path);
  return MaterialParams::from_range(a);
}

inline bayes::DiscrepancyParams discrepancy_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != bayes::kDiscrepancyDim)
    throw ConfigError("config key '" + path + "' must list varpi0..varpi6 and theta");
  std::vector<double> v(bayes::kFullDim, 0.0);
  for (std::size_t k = 0; k < bayes::kDiscrepancyDim; ++k) v[bayes::kModelDim + k] = j[k].get<double>();
  return bayes::DiscrepancyParams::from_full(v);
}

inline json discrepancy_to_json(const bayes::DiscrepancyParams& d) {
  json j = json::array();
  for (double v : d.varpi) j.push_back(v);
  j.push_back(d.theta);
  return j;
}

inline FireCurve fire_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "iso834") return FireCurve::iso();
    throw ConfigError("config key 'boundary.fire': unknown curve '" + j.get<std::string>() + "'");
  }
  if (j.contains("constant")) return FireCurve::constant_at(get<double>(j, "constant", "boundary.fire."));
  if (j.contains("table")) return FireCurve::tabulated(curve_from(j.at("table"), "boundary.fire.table"));
  throw ConfigError("config key 'boundary.fire' must be \"iso834\", {\"constant\": T} or {\"table\": [...]}");
}

inline json fire_to_json(const FireCurve& f) {
  switch (f.kind) {
    case FireCurve::Kind::Iso834: return "iso834";
    case FireCurve::Kind::Constant: return json{{"constant", f.constant}};
    case FireCurve::Kind::Table: {
      json t = json::array();
      for (const auto& pt : f.table.points()) t.push_back({pt.temperature, pt.value});
      return json{{"table", t}};
    }
  }
  return "iso834";
}

inline RunConfig parse(const json& j, const fs::path& source) {
  RunConfig c;
  c.source = source;
  const fs::path base = source.has_parent_path() ? source.parent_path() : fs::path(".");
  const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  c.name = get_or<std::string>(j, "name", "", source.stem().string().empty() ? "run" : source.stem().string());
  c.seed = get_or<std::uint64_t>(j, "seed", "", 1);
  c.threads = get_or<unsigned>(j, "threads", "", 1);

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid.tau = get_or(g, "tau", "grid.", c.grid.tau);
    c.grid.n_steps = get_or(g, "n_steps", "grid.", c.grid.n_steps);
    c.grid.element_size = get_or(g, "element_size", "grid.", c.grid.element_size);
    c.grid.substeps = get_or(g, "substeps", "grid.", c.grid.substeps);
  }
  c.grid.check();

  if (j.contains("boundary")) {
    const auto& b = j.at("boundary");
    c.boundary.emissivity = get_or(b, "emissivity", "boundary.", c.boundary.emissivity);
    c.boundary.h_conv = get_or(b, "h_conv", "boundary.", c.boundary.h_conv);
    c.boundary.ambient_unexposed = get_or(b, "ambient_unexposed", "boundary.", c.boundary.ambient_unexposed);
    if (b.contains("fire")) c.boundary.exposed = detail::fire_from(b.at("fire"));
    if (b.contains("emissivity_unexposed")) c.boundary.emissivity_unexposed = get<double>(b, "emissivity_unexposed", "boundary.");
    if (b.contains("h_conv_unexposed")) c.boundary.h_conv_unexposed = get<double>(b, "h_conv_unexposed", "boundary.");
  }
  c.boundary.check();

  const json products = j.value("products", json::object());
  const json materials = j.value("materials", json::object());
  const auto& lay = detail::req(j, "layup", "");
  const auto& layers = detail::req(lay, "layers", "layup.");
  if (!layers.is_array() || layers.empty()) throw ConfigError("config key 'layup.layers' must be a non-empty list");
  c.layup_json = json::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string path = "layup.layers[" + std::to_string(i) + "].";
    Layer layer;
    layer.thickness = get<double>(l, "thickness", path);
    json resolved{{"thickness", layer.thickness}};
    if (l.contains("product")) {
      const auto name = get<std::string>(l, "product", path);
      const auto& pj = detail::req(products, name, "products.");
      ProductConfig pc{name, get<double>(pj, "rho0", "products." + name + "."), layer.thickness};
      const auto slot = get_or<std::size_t>(l, "slot", path, 0);
      layer.source = CalibratedLayer{pc, slot};
      resolved["product"] = {{"name", name}, {"rho0", pc.rho0}, {"slot", slot}};
    } else if (l.contains("material")) {
      const auto name = get<std::string>(l, "material", path);
      const auto& mj = detail::req(materials, name, "materials.");
      const std::string mp = "materials." + name + ".";
      layer.source = MaterialCurves{detail::curve_from(detail::req(mj, "conductivity", mp), mp + "conductivity"),
                                    detail::curve_from(detail::req(mj, "specific_heat", mp), mp + "specific_heat"),
                                    detail::curve_from(detail::req(mj, "density", mp), mp + "density")};
      resolved["material"] = {{"name", name}, {"curves", mj}};
    } else {
      throw ConfigError("missing config key '" + path + "product' (or '" + path + "material')");
    }
    c.layup.layers.push_back(std::move(layer));
    c.layup_json.push_back(resolved);
  }
  c.layup.sensors = get<std::vector<std::size_t>>(lay, "sensors", "layup.");
  if (c.layup.sensors.empty()) throw ConfigError("config key 'layup.sensors' must name at least one interface");
  try {
    c.layup.check();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (c.layup.param_slots() != 1) throw ConfigError("layup must contain calibrated layers of exactly one product slot (0)");

  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    for (std::size_t i = 0; i < c.prior.dim(); ++i) {
      const auto& n = c.prior.names[i];
      if (!p.contains(n)) continue;
      const auto b = get<std::vector<double>>(p, n, "prior.");
      if (b.size() != 2) throw ConfigError("config key 'prior." + n + "' must be [lower, upper]");
      c.prior.lower[i] = b[0];
      c.prior.upper[i] = b[1];
    }
    for (const auto& [k, v] : p.items())
      if (std::find(c.prior.names.begin(), c.prior.names.end(), k) == c.prior.names.end())
        throw ConfigError("config key 'prior." + k + "' is not a parameter");
  }
  c.prior.check();
  for (std::size_t i = 0; i < bayes::kModelDim; ++i) {
    const auto& r = kMaterialRanges[i];
    if (c.prior.lower[i] < r.lower || c.prior.upper[i] > r.upper)
      throw ConfigError(std::string("prior.") + r.name + " exceeds the admissible parameter range");
  }

  if (j.contains("surrogate")) {
    const auto& s = j.at("surrogate");
    c.surrogate.k = get_or(s, "k", "surrogate.", c.surrogate.k);
    c.surrogate.train.epsilon0 = get_or(s, "epsilon0", "surrogate.", c.surrogate.train.epsilon0);
    c.surrogate.train.min_degree = get_or(s, "min_degree", "surrogate.", c.surrogate.train.min_degree);
    c.surrogate.train.max_degree = get_or(s, "max_degree", "surrogate.", c.surrogate.train.max_degree);
    c.surrogate.eta_threshold = get_or(s, "eta_threshold", "surrogate.", c.surrogate.eta_threshold);
  }
  if (c.surrogate.k < 2) throw ConfigError("surrogate.k must be at least 2");
  if (c.surrogate.train.min_degree < 0 || c.surrogate.train.max_degree < c.surrogate.train.min_degree)
    throw ConfigError("surrogate degree range is empty");

  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    c.sampler.walkers = get_or(s, "walkers", "sampler.", c.sampler.walkers);
    c.sampler.steps = get_or(s, "steps", "sampler.", c.sampler.steps);
    c.sampler.a = get_or(s, "a", "sampler.", c.sampler.a);
    c.sampler.burn_in = get_or(s, "burn_in", "sampler.", c.sampler.burn_in);
  }

  if (j.contains("measurements")) {
    c.measurements = resolve(get<std::string>(j, "measurements", ""));
    if (!fs::exists(*c.measurements)) throw ConfigError("measurements file not found: " + c.measurements->string());
  }
  if (j.contains("parameters")) c.parameters = detail::params_from_json(j.at("parameters"), "parameters.");
  if (j.contains("report")) {
    const auto& r = j.at("report");
    c.snapshots = get_or(r, "snapshots", "report.", c.snapshots);
    c.predictive_draws = get_or(r, "predictive_draws", "report.", c.predictive_draws);
  }
  if (j.contains("validation")) {
    const auto& v = j.at("validation");
    ValidationSettings vs;
    vs.config = resolve(get<std::string>(v, "config", "validation."));
    if (!fs::exists(vs.config)) throw ConfigError("validation config not found: " + vs.config.string());
    if (v.contains("discrepancy")) vs.discrepancy = detail::discrepancy_from_json(v.at("discrepancy"), "validation.discrepancy");
    vs.draws = get_or(v, "draws", "validation.", vs.draws);
    c.validation = vs;
  }
  return c;
}

}  // namespace detail

/// Parses a run configuration. Paths are relative to the directory of `source`.
inline RunConfig parse_config(const json& j, const fs::path& source = {}) {
  try {
    return detail::parse(j, source);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path);
}

/// Fully resolved configuration with defaults filled in. Stage hashes are taken
/// over sections of this document.
inline json resolved(const RunConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["grid"] = {{"tau", c.grid.tau}, {"n_steps", c.grid.n_steps}, {"element_size", c.grid.element_size},
               {"substeps", c.grid.substeps}};
  json b{{"emissivity", c.boundary.emissivity},
         {"h_conv", c.boundary.h_conv},
         {"ambient_unexposed", c.boundary.ambient_unexposed},
         {"fire", detail::fire_to_json(c.boundary.exposed)}};
  if (c.boundary.emissivity_unexposed) b["emissivity_unexposed"] = *c.boundary.emissivity_unexposed;
  if (c.boundary.h_conv_unexposed) b["h_conv_unexposed"] = *c.boundary.h_conv_unexposed;
  j["boundary"] = b;
  j["layup"] = {{"layers", c.layup_json}, {"sensors", c.layup.sensors}};
  json prior;
  for (std::size_t i = 0; i < c.prior.dim(); ++i) prior[c.prior.names[i]] = {c.prior.lower[i], c.prior.upper[i]};
  j["prior"] = prior;
  j["surrogate"] = {{"k", c.surrogate.k},
                    {"epsilon0", c.surrogate.train.epsilon0},
                    {"min_degree", c.surrogate.train.min_degree},
                    {"max_degree", c.surrogate.train.max_degree},
                    {"eta_threshold", c.surrogate.eta_threshold}};
  j["sampler"] = {{"walkers", c.sampler.walkers}, {"steps", c.sampler.steps}, {"a", c.sampler.a},
                  {"burn_in", c.sampler.burn_in}};
  j["report"] = {{"snapshots", c.snapshots}, {"predictive_draws", c.predictive_draws}};
  if (c.parameters) j["parameters"] = detail::params_to_json(*c.parameters);
  return j;
}

/// Seed for one stage, derived from the run seed so stages draw independent streams.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  const std::string h = Hasher().add(seed).add(stage).hex();
  return std::stoull(h.substr(0, 16), nullptr, 16);
}

}  // namespace firecal::pipeline
