#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "firecal/curve.hpp"
#include "firecal/error.hpp"
#include "firecal/material.hpp"

namespace firecal {

inline constexpr double kStefanBoltzmann = 5.670374419e-8;  // W/(m²·K⁴)
inline constexpr double kKelvinOffset = 273.15;

/// Standard fire curve, t in seconds, result in °C.
inline double iso834(double t) {
  if (t < 0.0) throw DomainError("iso834: negative time");
  return 20.0 + 345.0 * std::log10(8.0 * t / 60.0 + 1.0);
}

struct SimulationGrid {
  double tau = 10.0;             // s, output spacing
  std::size_t n_steps = 601;     // output samples, t = 0 .. (n_steps-1)·tau
  double element_size = 2.5e-4;  // m
  int substeps = 10;             // implicit steps per output interval

  void check() const {
    if (!(tau > 0.0)) throw DomainError("grid: tau must be positive");
    if (n_steps < 2) throw DomainError("grid: n_steps must be at least 2");
    if (!(element_size > 0.0)) throw DomainError("grid: element_size must be positive");
    if (substeps < 1) throw DomainError("grid: substeps must be at least 1");
  }

  double time(std::size_t i) const { return static_cast<double>(i) * tau; }

  std::vector<double> times() const {
    std::vector<double> t(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) t[i] = time(i);
    return t;
  }
};

/// Gas temperature history on the exposed face.
struct FireCurve {
  enum class Kind { Iso834, Constant, Table };
  Kind kind = Kind::Iso834;
  double constant = 20.0;  // °C, Kind::Constant
  PiecewiseLinear table;   // time s -> °C, Kind::Table

  static FireCurve iso() { return {}; }
  static FireCurve constant_at(double value) { return {Kind::Constant, value, {}}; }
  static FireCurve tabulated(PiecewiseLinear t) { return {Kind::Table, 0.0, std::move(t)}; }

  double operator()(double t) const {
    switch (kind) {
      case Kind::Iso834: return iso834(t);
      case Kind::Constant: return constant;
      case Kind::Table: return table(t);
    }
    return constant;
  }
};

struct BoundaryConfig {
  double emissivity = 0.8;  // 0 disables radiation
  double h_conv = 25.0;     // W/(m²·K)
  double ambient_unexposed = 19.5;
  FireCurve exposed = FireCurve::iso();
  // Unexposed-face coefficients; the exposed-face values apply when unset.
  std::optional<double> emissivity_unexposed;
  std::optional<double> h_conv_unexposed;

  void check() const {
    const auto bad_eps = [](double e) { return !(e >= 0.0 && e <= 1.0); };
    if (bad_eps(emissivity) || bad_eps(emissivity_unexposed.value_or(emissivity)))
      throw DomainError("boundary: emissivity must lie in [0, 1]");
    if (h_conv < 0.0 || h_conv_unexposed.value_or(h_conv) < 0.0)
      throw DomainError("boundary: convection coefficient must be non-negative");
  }
};

/// A layer whose properties come from a calibrated parameter vector.
struct CalibratedLayer {
  ProductConfig product;
  std::size_t slot = 0;  // index into the params_per_layer argument of simulate()
};

using PropertySource = std::variant<CalibratedLayer, MaterialCurves>;

struct Layer {
  PropertySource source;
  double thickness = 0.0125;  // m
};

/// Ordered layers from the exposed face, plus sensor interfaces.
/// Interface k sits between layer k-1 and layer k; 0 is the exposed face and
/// layers.size() the unexposed face.
struct Layup {
  std::vector<Layer> layers;
  std::vector<std::size_t> sensors;

  std::size_t param_slots() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      if (const auto* c = std::get_if<CalibratedLayer>(&l.source)) n = std::max(n, c->slot + 1);
    return n;
  }

  void check() const {
    if (layers.empty()) throw DomainError("layup: at least one layer required");
    for (const auto& l : layers)
      if (!(l.thickness > 0.0)) throw DomainError("layup: layer thickness must be positive");
    for (auto s : sensors)
      if (s > layers.size()) throw DomainError("layup: sensor interface index out of range");
  }
};

/// Antiderivative F(T) = ∫f(T)g(T) dT of the product of two piecewise-linear
/// curves, integrated exactly (the product is piecewise quadratic).
///
/// With f = ρ and g = c this is the volumetric enthalpy; with f = λ and g ≡ 1
/// it is the Kirchhoff transform of the conductivity.
class CurveProductIntegral {
 public:
  CurveProductIntegral() = default;

  CurveProductIntegral(const PiecewiseLinear& f, const PiecewiseLinear& g) : f_(f), g_(g) {
    std::vector<double> knots;
    for (const auto& p : f.points()) knots.push_back(p.temperature);
    for (const auto& p : g.points()) knots.push_back(p.temperature);
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    if (knots.size() == 1) knots.push_back(knots.front() + 1.0);

    double h = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double a = knots[i], b = knots[i + 1];
      const double mid = 0.5 * (a + b);
      const auto fp = f.piece_containing(mid);
      const auto gp = g.piece_containing(mid);
      Segment s;
      s.start = a;
      s.value_start = h;
      const double f0 = eval_piece(fp, a), g0 = eval_piece(gp, a);
      const double f1 = (eval_piece(fp, b) - f0) / (b - a);
      const double g1 = (eval_piece(gp, b) - g0) / (b - a);
      s.q0 = f0 * g0;
      s.q1 = f0 * g1 + f1 * g0;
      s.q2 = f1 * g1;
      segments_.push_back(s);
      h += s.integral(b - a);
    }
    end_ = knots.back();
    value_end_ = h;
    slope_front_ = f(knots.front()) * g(knots.front());
    slope_back_ = f(end_) * g(end_);
  }

  /// Integral from the first breakpoint to t.
  double operator()(double t) const {
    const double t0 = segments_.front().start;
    if (t <= t0) return slope_front_ * (t - t0);
    if (t >= end_) return value_end_ + slope_back_ * (t - end_);
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double x, const Segment& s) { return x < s.start; });
    const Segment& s = *(it - 1);
    return s.value_start + s.integral(t - s.start);
  }

  /// Integrand f·g at t.
  double integrand(double t) const { return f_(t) * g_(t); }

  /// Mean of the integrand over [a, b].
  double secant(double a, double b) const {
    if (std::abs(b - a) < 1e-6) return integrand(0.5 * (a + b));
    return ((*this)(b) - (*this)(a)) / (b - a);
  }

 private:
  struct Segment {
    double start, value_start, q0, q1, q2;
    double integral(double s) const { return s * (q0 + s * (0.5 * q1 + s * q2 / 3.0)); }
  };
  PiecewiseLinear f_;
  PiecewiseLinear g_;
  std::vector<Segment> segments_;
  double end_ = 0.0, value_end_ = 0.0, slope_front_ = 0.0, slope_back_ = 0.0;
};

struct SolverOptions {
  double picard_tolerance = 1e-6;  // relative to the step's temperature increment
  int max_picard = 50;
};

struct SolverStats {
  std::size_t steps = 0;
  int max_picard = 0;
  std::size_t total_picard = 0;
  double boundary_energy = 0.0;  // J/m², net flux into the slab integrated over time
  double enthalpy_change = 0.0;  // J/m²
};

/// Temperature history of one sensor on the output grid, °C.
using TemperatureSeries = std::vector<double>;

struct SimulationResult {
  std::vector<TemperatureSeries> sensors;  // in Layup::sensors order
  SolverStats stats;
};

/// Linear two-node finite elements with lumped capacity, backward Euler in time
/// and Picard iteration on the temperature-dependent properties.
///
/// Nodal capacity is the mean of ρc between the old and the current iterate
/// temperature (the secant of the enthalpy), so a converged step conserves
/// energy exactly. Element conductance is the mean of λ over the element's
/// nodal temperatures (Kirchhoff transform), which resolves the steep λ drop
/// of the first key process on the default mesh.
class SlabSolver {
 public:
  SlabSolver(std::vector<MaterialCurves> layer_curves, std::span<const double> thickness,
             const BoundaryConfig& bc, double element_size, SolverOptions options = {})
      : bc_(bc), options_(options) {
    bc_.check();
    if (layer_curves.size() != thickness.size() || layer_curves.empty())
      throw DomainError("solver: one property set per layer required");
    for (auto& c : layer_curves) {
      materials_.push_back({CurveProductIntegral(c.conductivity, PiecewiseLinear({{0.0, 1.0}})),
                            CurveProductIntegral(c.density, c.specific_heat)});
    }
    node_x_.push_back(0.0);
    interface_nodes_.push_back(0);
    for (std::size_t l = 0; l < thickness.size(); ++l) {
      const auto n = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(thickness[l] / element_size)));
      const double h = thickness[l] / static_cast<double>(n);
      const double x0 = node_x_.back();
      for (std::size_t e = 0; e < n; ++e) {
        element_layer_.push_back(l);
        element_h_.push_back(h);
        node_x_.push_back(x0 + h * static_cast<double>(e + 1));
      }
      interface_nodes_.push_back(node_x_.size() - 1);
    }
    const std::size_t nn = node_x_.size();
    cap_.resize(nn);
    diag_.resize(nn);
    lower_.resize(nn);
    upper_.resize(nn);
    rhs_.resize(nn);
    iter_.resize(nn);
    next_.resize(nn);
    cond_.resize(element_h_.size());
  }

  std::size_t node_count() const { return node_x_.size(); }
  std::size_t interface_node(std::size_t k) const { return interface_nodes_.at(k); }
  std::span<const double> node_positions() const { return node_x_; }

  std::vector<double> uniform_state(double t) const { return std::vector<double>(node_count(), t); }

  /// Total enthalpy per unit area of a nodal field, J/m².
  double enthalpy(std::span<const double> temps) const {
    double sum = 0.0;
    for (std::size_t e = 0; e < element_h_.size(); ++e) {
      const auto& h = materials_[element_layer_[e]].enthalpy;
      sum += 0.5 * element_h_[e] * (h(temps[e]) + h(temps[e + 1]));
    }
    return sum;
  }

  double exposed_flux(double t_gas, double t_surf) const {
    return face_flux(t_gas, t_surf, bc_.h_conv, bc_.emissivity);
  }
  double unexposed_flux(double t_surf) const {
    return face_flux(t_surf, bc_.ambient_unexposed, bc_.h_conv_unexposed.value_or(bc_.h_conv),
                     bc_.emissivity_unexposed.value_or(bc_.emissivity));
  }

  struct StepInfo {
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
  };

  /// One implicit step from `state` (time t_new - dt) to t_new; `state` is
  /// overwritten with the converged field.
  StepInfo step(std::vector<double>& state, double t_new, double dt) {
    const std::size_t nn = node_count();
    const std::size_t ne = element_h_.size();
    const double t_gas = bc_.exposed(t_new);
    const double h_exp = bc_.h_conv;
    const double h_unexp = bc_.h_conv_unexposed.value_or(bc_.h_conv);
    const double eps_exp = bc_.emissivity;
    const double eps_unexp = bc_.emissivity_unexposed.value_or(bc_.emissivity);

    std::copy(state.begin(), state.end(), iter_.begin());
    StepInfo info;
    for (int k = 1; k <= options_.max_picard; ++k) {
      std::fill(cap_.begin(), cap_.end(), 0.0);
      for (std::size_t e = 0; e < ne; ++e) {
        const auto& m = materials_[element_layer_[e]];
        const double h = element_h_[e];
        cond_[e] = m.kirchhoff.secant(iter_[e], iter_[e + 1]) / h;
        cap_[e] += 0.5 * h * m.enthalpy.secant(state[e], iter_[e]);
        cap_[e + 1] += 0.5 * h * m.enthalpy.secant(state[e + 1], iter_[e + 1]);
      }
      // Solved for the increment over the step, so a field in equilibrium
      // with its surroundings stays exactly unchanged.
      for (std::size_t i = 0; i < nn; ++i) {
        diag_[i] = cap_[i] / dt;
        rhs_[i] = 0.0;
        lower_[i] = upper_[i] = 0.0;
      }
      for (std::size_t e = 0; e < ne; ++e) {
        diag_[e] += cond_[e];
        diag_[e + 1] += cond_[e];
        upper_[e] = -cond_[e];
        lower_[e + 1] = -cond_[e];
        const double q = cond_[e] * (state[e + 1] - state[e]);
        rhs_[e] += q;
        rhs_[e + 1] -= q;
      }
      const double a_in = h_exp + radiative_coefficient(t_gas, iter_[0], eps_exp);
      diag_[0] += a_in;
      rhs_[0] += a_in * (t_gas - state[0]);
      const double a_out =
          h_unexp + radiative_coefficient(iter_[nn - 1], bc_.ambient_unexposed, eps_unexp);
      diag_[nn - 1] += a_out;
      rhs_[nn - 1] += a_out * (bc_.ambient_unexposed - state[nn - 1]);

      solve_tridiagonal();
      for (std::size_t i = 0; i < nn; ++i) next_[i] += state[i];

      double delta = 0.0, increment = 0.0;
      for (std::size_t i = 0; i < nn; ++i) {
        delta = std::max(delta, std::abs(next_[i] - iter_[i]));
        increment = std::max(increment, std::abs(next_[i] - state[i]));
      }
      std::swap(iter_, next_);
      info.iterations = k;
      info.residual = delta / std::max(increment, 1.0);
      if (info.residual <= options_.picard_tolerance) {
        info.converged = true;
        break;
      }
    }
    if (info.converged) std::copy(iter_.begin(), iter_.end(), state.begin());
    return info;
  }

  /// Runs from a uniform field at the unexposed ambient temperature and samples
  /// the nodal temperatures at `sample_nodes` on the output grid.
  SimulationResult run(const SimulationGrid& grid, std::span<const std::size_t> sample_nodes) {
    grid.check();
    SimulationResult result;
    result.sensors.assign(sample_nodes.size(), TemperatureSeries(grid.n_steps));
    auto state = uniform_state(bc_.ambient_unexposed);
    const double h0 = enthalpy(state);
    const double dt = grid.tau / grid.substeps;
    for (std::size_t s = 0; s < sample_nodes.size(); ++s) result.sensors[s][0] = state[sample_nodes[s]];

    auto& st = result.stats;
    const std::size_t nn = node_count();
    for (std::size_t i = 1; i < grid.n_steps; ++i) {
      for (int sub = 1; sub <= grid.substeps; ++sub) {
        const double t_new = grid.time(i - 1) + dt * sub;
        const auto info = step(state, t_new, dt);
        if (!info.converged) {
          throw SolverError(st.steps, info.residual,
                            "Picard iteration did not converge at step " + std::to_string(st.steps) +
                                " (t = " + std::to_string(t_new) +
                                " s), residual = " + std::to_string(info.residual));
        }
        ++st.steps;
        st.max_picard = std::max(st.max_picard, info.iterations);
        st.total_picard += static_cast<std::size_t>(info.iterations);
        st.boundary_energy +=
            dt * (exposed_flux(bc_.exposed(t_new), state[0]) - unexposed_flux(state[nn - 1]));
      }
      for (std::size_t s = 0; s < sample_nodes.size(); ++s) result.sensors[s][i] = state[sample_nodes[s]];
    }
    st.enthalpy_change = enthalpy(state) - h0;
    return result;
  }

 private:
  struct Material {
    CurveProductIntegral kirchhoff;  // ∫λ dT
    CurveProductIntegral enthalpy;   // ∫ρc dT
  };

  static double radiative_coefficient(double hot, double cold, double eps) {
    if (eps == 0.0) return 0.0;
    const double a = hot + kKelvinOffset, b = cold + kKelvinOffset;
    // εσ(a⁴ - b⁴) = εσ(a² + b²)(a + b)·(a - b)
    return eps * kStefanBoltzmann * (a * a + b * b) * (a + b);
  }

  static double face_flux(double hot, double cold, double h, double eps) {
    const double a = hot + kKelvinOffset, b = cold + kKelvinOffset;
    return h * (hot - cold) + eps * kStefanBoltzmann * (a * a * a * a - b * b * b * b);
  }

  void solve_tridiagonal() {
    const std::size_t n = diag_.size();
    // Thomas algorithm; the system is diagonally dominant.
    for (std::size_t i = 1; i < n; ++i) {
      const double w = lower_[i] / diag_[i - 1];
      diag_[i] -= w * upper_[i - 1];
      rhs_[i] -= w * rhs_[i - 1];
    }
    next_[n - 1] = rhs_[n - 1] / diag_[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) next_[i] = (rhs_[i] - upper_[i] * next_[i + 1]) / diag_[i];
  }

  BoundaryConfig bc_;
  SolverOptions options_;
  std::vector<Material> materials_;
  std::vector<double> node_x_;
  std::vector<std::size_t> interface_nodes_;
  std::vector<std::size_t> element_layer_;
  std::vector<double> element_h_;
  std::vector<double> cap_, diag_, lower_, upper_, rhs_, iter_, next_, cond_;
};

/// Resolves every layer of `layup` to property curves.
inline std::vector<MaterialCurves> resolve_layers(std::span<const MaterialParams> params_per_layer,
                                                  const Layup& layup) {
  std::vector<MaterialCurves> out;
  out.reserve(layup.layers.size());
  for (const auto& layer : layup.layers) {
    if (const auto* cal = std::get_if<CalibratedLayer>(&layer.source)) {
      if (cal->slot >= params_per_layer.size())
        throw DomainError("simulate: missing parameters for calibrated layer slot " +
                          std::to_string(cal->slot));
      out.push_back(make_curves(params_per_layer[cal->slot], cal->product));
    } else {
      out.push_back(std::get<MaterialCurves>(layer.source));
    }
  }
  return out;
}

/// Forward model: interface temperature histories of a layup under fire exposure.
inline SimulationResult simulate(std::span<const MaterialParams> params_per_layer, const Layup& layup,
                                 const BoundaryConfig& bc, const SimulationGrid& grid,
                                 SolverOptions options = {}) {
  layup.check();
  grid.check();
  std::vector<double> thickness;
  for (const auto& l : layup.layers) thickness.push_back(l.thickness);
  SlabSolver solver(resolve_layers(params_per_layer, layup), thickness, bc, grid.element_size, options);
  std::vector<std::size_t> nodes;
  for (auto s : layup.sensors) nodes.push_back(solver.interface_node(s));
  return solver.run(grid, nodes);
}

inline SimulationResult simulate(const MaterialParams& params, const Layup& layup, const BoundaryConfig& bc,
                                 const SimulationGrid& grid, SolverOptions options = {}) {
  return simulate(std::span<const MaterialParams>(&params, 1), layup, bc, grid, options);
}

}  // namespace firecal
