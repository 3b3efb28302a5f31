#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "firecal/curve.hpp"
#include "firecal/error.hpp"

namespace firecal {

/// Six calibration parameters of the effective gypsum-board properties,
/// in the order X1..X6 used by parameter tables and files.
struct MaterialParams {
  double second_onset = 550.0;          ///< X1, °C: start of the second key process
  double second_peak_fraction = 0.55;   ///< X2: peak position between X1 and 850 °C
  double plateau_conductivity = 0.175;  ///< X3, W/(m·K): λ on [180 °C, X1]
  double conductivity_1200 = 0.65;      ///< X4, W/(m·K): λ(1200 °C)
  double first_peak_heat = 3.95e4;      ///< X5, J/(kg·K): c(140 °C)
  double second_peak_heat = 4.05e4;     ///< X6, J/(kg·K): c at the second peak

  static constexpr std::size_t size = 6;

  std::array<double, 6> to_array() const {
    return {second_onset,      second_peak_fraction, plateau_conductivity,
            conductivity_1200, first_peak_heat,      second_peak_heat};
  }

  template <class Range>
  static MaterialParams from_range(const Range& x) {
    MaterialParams p;
    auto it = std::begin(x);
    p.second_onset = *it++;
    p.second_peak_fraction = *it++;
    p.plateau_conductivity = *it++;
    p.conductivity_1200 = *it++;
    p.first_peak_heat = *it++;
    p.second_peak_heat = *it;
    return p;
  }

  /// Temperature of the second specific-heat peak, X1 + (850 - X1)·X2.
  double second_peak_temperature() const {
    return second_onset + (850.0 - second_onset) * second_peak_fraction;
  }
};

/// Room-temperature properties of a board product.
struct ProductConfig {
  std::string name;
  double rho0 = 700.0;        // kg/m³
  double thickness = 0.0125;  // m
};

/// Admissible parameter box.
struct ParamRange {
  const char* name;
  double lower;
  double upper;
};

inline constexpr std::array<ParamRange, 6> kMaterialRanges{{
    {"x1", 300.0, 800.0},
    {"x2", 0.1, 1.0},
    {"x3", 0.1, 0.25},
    {"x4", 0.1, 1.2},
    {"x5", 1.4e4, 6.5e4},
    {"x6", 1.0e3, 8.0e4},
}};

namespace material {

inline constexpr double kAmbientConductivity = 0.4;
inline constexpr double kBaselineHeat = 960.0;
inline constexpr double kFirstStart = 100.0;
inline constexpr double kFirstPeak = 140.0;
inline constexpr double kFirstEnd = 180.0;
inline constexpr double kSecondEnd = 850.0;
inline constexpr double kMaxTemperature = 1200.0;
inline constexpr double kDensityAfterFirst = 0.82;
inline constexpr double kDensityAfterSecond = 0.77;

}  // namespace material

struct Violation {
  std::string parameter;
  std::string message;
};

/// Lists every violated bound. Empty when the parameters are admissible.
inline std::vector<Violation> validate(const MaterialParams& p) {
  std::vector<Violation> out;
  const auto x = p.to_array();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& r = kMaterialRanges[i];
    if (!(x[i] >= r.lower && x[i] <= r.upper)) {
      std::ostringstream os;
      os << r.name << " = " << x[i] << " outside [" << r.lower << ", " << r.upper << "]";
      out.push_back({r.name, os.str()});
    }
  }
  return out;
}

namespace detail {

inline void require_valid(const MaterialParams& p) {
  const auto v = validate(p);
  if (!v.empty()) throw DomainError("invalid material parameters: " + v.front().message);
}

inline void require_temperature(double t) {
  if (!(t >= 0.0 && t <= material::kMaxTemperature))
    throw DomainError("temperature " + std::to_string(t) + " °C outside [0, 1200]");
}

}  // namespace detail

/// λ(T) breakpoints.
inline PiecewiseLinear conductivity_curve(const MaterialParams& p) {
  using namespace material;
  return PiecewiseLinear({{0.0, kAmbientConductivity},
                          {kFirstStart, kAmbientConductivity},
                          {kFirstEnd, p.plateau_conductivity},
                          {p.second_onset, p.plateau_conductivity},
                          {kMaxTemperature, p.conductivity_1200}});
}

/// c(T) breakpoints: baseline with a spike per key process.
inline PiecewiseLinear specific_heat_curve(const MaterialParams& p) {
  using namespace material;
  const double peak = p.second_peak_temperature();
  std::vector<CurvePoint> pts{{0.0, kBaselineHeat},
                              {kFirstStart, kBaselineHeat},
                              {kFirstPeak, p.first_peak_heat},
                              {kFirstEnd, kBaselineHeat},
                              {p.second_onset, kBaselineHeat},
                              {peak, p.second_peak_heat},
                              {kSecondEnd, kBaselineHeat},
                              {kMaxTemperature, kBaselineHeat}};
  return PiecewiseLinear(std::move(pts));
}

/// ρ(T) breakpoints.
inline PiecewiseLinear density_curve(const MaterialParams& p, const ProductConfig& cfg) {
  using namespace material;
  const double r0 = cfg.rho0;
  return PiecewiseLinear({{0.0, r0},
                          {kFirstStart, r0},
                          {kFirstEnd, kDensityAfterFirst * r0},
                          {p.second_onset, kDensityAfterFirst * r0},
                          {p.second_peak_temperature(), kDensityAfterSecond * r0},
                          {kMaxTemperature, kDensityAfterSecond * r0}});
}

inline double conductivity(double t, const MaterialParams& p) {
  detail::require_temperature(t);
  detail::require_valid(p);
  return conductivity_curve(p)(t);
}

inline double specific_heat(double t, const MaterialParams& p) {
  detail::require_temperature(t);
  detail::require_valid(p);
  return specific_heat_curve(p)(t);
}

inline double density(double t, const MaterialParams& p, const ProductConfig& cfg) {
  detail::require_temperature(t);
  detail::require_valid(p);
  if (!(cfg.rho0 > 0.0)) throw DomainError("rho0 must be positive");
  return density_curve(p, cfg)(t);
}

/// The three property curves of one material.
struct MaterialCurves {
  PiecewiseLinear conductivity;
  PiecewiseLinear specific_heat;
  PiecewiseLinear density;
};

inline MaterialCurves make_curves(const MaterialParams& p, const ProductConfig& cfg) {
  detail::require_valid(p);
  if (!(cfg.rho0 > 0.0)) throw DomainError("rho0 must be positive");
  return {conductivity_curve(p), specific_heat_curve(p), density_curve(p, cfg)};
}

}  // namespace firecal
