#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "firecal/heat_solver.hpp"
#include "fixtures.hpp"

using namespace firecal;

namespace {

// Slab of length L, initially T0, with T(0,t) = Ts and T(L,t) = T0 for t > 0.
double fourier_slab(double x, double t, double length, double alpha, double t0, double ts) {
  double sum = 0.0;
  for (int n = 1; n <= 2000; ++n) {
    const double k = n * std::numbers::pi / length;
    const double term = 2.0 / (n * std::numbers::pi) * std::sin(k * x) * std::exp(-alpha * k * k * t);
    sum += term;
    if (std::abs(term) < 1e-16 && n > 10) break;
  }
  return ts + (t0 - ts) * x / length + (t0 - ts) * sum;
}

Layup constant_slab(int n_layers, double total, double lambda, double c, double rho) {
  Layup lay;
  for (int i = 0; i < n_layers; ++i)
    lay.layers.push_back({fixtures::constant_material(lambda, c, rho), total / n_layers});
  return lay;
}

}  // namespace

TEST(Iso834, Values) {
  EXPECT_DOUBLE_EQ(iso834(0.0), 20.0);
  EXPECT_NEAR(iso834(1800.0), 841.8, 0.1);
  double prev = iso834(0.0);
  for (double t = 1.0; t <= 6000.0; t += 7.0) {
    EXPECT_GT(iso834(t), prev);
    prev = iso834(t);
  }
  EXPECT_THROW(iso834(-1.0), DomainError);
}

TEST(Simulate, ThermalEquilibrium) {
  auto lay = fixtures::e1_like();
  lay.sensors = {0, 1, 2};
  BoundaryConfig bc;
  bc.exposed = FireCurve::constant_at(19.5);
  SimulationGrid grid;
  grid.n_steps = 61;
  const auto r = simulate(MaterialParams{}, lay, bc, grid);
  for (const auto& s : r.sensors)
    for (double v : s) EXPECT_NEAR(v, 19.5, 1e-9);
}

TEST(Simulate, FourierSeriesOracle) {
  const double lambda = 0.4, c = 960.0, rho = 700.0, length = 0.0125;
  const double alpha = lambda / (rho * c);
  auto lay = constant_slab(4, length, lambda, c, rho);
  lay.sensors = {1, 2, 3};
  BoundaryConfig bc;
  bc.emissivity = 0.0;
  bc.h_conv = 1e8;
  bc.exposed = FireCurve::constant_at(1000.0);
  SimulationGrid grid;
  grid.n_steps = 181;
  const auto r = simulate(std::span<const MaterialParams>{}, lay, bc, grid);
  double worst = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double x = length * static_cast<double>(s + 1) / 4.0;
    for (std::size_t i = 6; i < grid.n_steps; ++i) {
      const double exact = fourier_slab(x, grid.time(i), length, alpha, 19.5, 1000.0);
      worst = std::max(worst, std::abs(r.sensors[s][i] - exact) / exact);
    }
  }
  EXPECT_LT(worst, 0.01);
}

TEST(Simulate, EnergyConservationConstantProperties) {
  auto lay = constant_slab(1, 0.0125, 0.4, 960.0, 700.0);
  lay.sensors = {0, 1};
  const auto r = simulate(std::span<const MaterialParams>{}, lay, BoundaryConfig{}, SimulationGrid{});
  EXPECT_NEAR(r.stats.boundary_energy, r.stats.enthalpy_change, 0.005 * std::abs(r.stats.enthalpy_change));
}

TEST(Simulate, EnergyConservationDefaultCase) {
  auto lay = fixtures::e1_like();
  const auto r = simulate(MaterialParams{}, lay, BoundaryConfig{}, SimulationGrid{});
  EXPECT_NEAR(r.stats.boundary_energy, r.stats.enthalpy_change, 0.005 * std::abs(r.stats.enthalpy_change));
  EXPECT_LE(r.stats.max_picard, 50);
}

TEST(Simulate, MaximumPrinciple) {
  auto lay = constant_slab(5, 0.02, 0.3, 1000.0, 800.0);
  lay.sensors = {1, 2, 3, 4};
  BoundaryConfig bc;
  bc.exposed = FireCurve::constant_at(500.0);
  SimulationGrid grid;
  grid.n_steps = 301;
  const auto r = simulate(std::span<const MaterialParams>{}, lay, bc, grid);
  for (const auto& s : r.sensors)
    for (double v : s) {
      EXPECT_GE(v, 19.5 - 1e-6);
      EXPECT_LE(v, 500.0 + 1e-6);
    }
}

TEST(Simulate, ExposedSurfaceHeatsMonotonically) {
  auto lay = constant_slab(1, 0.0125, 0.4, 960.0, 700.0);
  lay.sensors = {0};
  const auto r = simulate(std::span<const MaterialParams>{}, lay, BoundaryConfig{}, SimulationGrid{});
  for (std::size_t i = 1; i < r.sensors[0].size(); ++i) EXPECT_GE(r.sensors[0][i], r.sensors[0][i - 1]);
}

TEST(Simulate, Deterministic) {
  auto lay = fixtures::e1_like();
  SimulationGrid grid;
  grid.n_steps = 200;
  MaterialParams p;
  p.second_onset = 420.0;
  const auto a = simulate(p, lay, BoundaryConfig{}, grid);
  const auto b = simulate(p, lay, BoundaryConfig{}, grid);
  EXPECT_EQ(a.sensors, b.sensors);
}

TEST(Simulate, InitialValueIsAmbient) {
  const auto r = simulate(MaterialParams{}, fixtures::e1_like(), BoundaryConfig{}, SimulationGrid{.n_steps = 3});
  EXPECT_DOUBLE_EQ(r.sensors[0][0], 19.5);
}

// The doubled mesh stays within 1.5 °C of the default one; the single largest
// deviation is where the sensor leaves the dehydration plateau.
TEST(Simulate, MeshDoublingSelfConvergence) {
  const auto lay = fixtures::e1_like();
  SimulationGrid fine, coarse;
  coarse.element_size = 5e-4;
  const auto a = simulate(MaterialParams{}, lay, BoundaryConfig{}, fine);
  const auto b = simulate(MaterialParams{}, lay, BoundaryConfig{}, coarse);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.sensors[0].size(); ++i) worst = std::max(worst, std::abs(a.sensors[0][i] - b.sensors[0][i]));
  EXPECT_LT(worst, 1.5);
}

TEST(Simulate, HalvingTimeAndSpaceConverges) {
  const auto lay = fixtures::e1_like();
  SimulationGrid base, half;
  half.element_size = 1.25e-4;
  half.substeps = 20;
  const auto a = simulate(MaterialParams{}, lay, BoundaryConfig{}, base);
  const auto b = simulate(MaterialParams{}, lay, BoundaryConfig{}, half);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.sensors[0].size(); ++i) worst = std::max(worst, std::abs(a.sensors[0][i] - b.sensors[0][i]));
  EXPECT_LT(worst, 0.5);
}

TEST(SlabSolver, ZeroFluxStepKeepsUniformField) {
  BoundaryConfig bc;
  bc.h_conv = 0.0;
  bc.emissivity = 0.0;
  MaterialParams p;
  std::vector<double> thick{0.0125};
  SlabSolver solver({make_curves(p, fixtures::product_a())}, thick, bc, 2.5e-4);
  auto state = solver.uniform_state(300.0);
  const auto info = solver.step(state, 1.0, 1.0);
  EXPECT_TRUE(info.converged);
  for (double v : state) EXPECT_EQ(v, 300.0);
}

TEST(SlabSolver, NonConvergenceReportsStep) {
  SolverOptions opt;
  opt.max_picard = 1;
  try {
    simulate(MaterialParams{}, fixtures::e1_like(), BoundaryConfig{}, SimulationGrid{}, opt);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), opt.picard_tolerance);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(SlabSolver, InterfaceNodesAndConfigChecks) {
  auto lay = fixtures::e1_like();
  lay.sensors = {3};
  EXPECT_THROW(simulate(MaterialParams{}, lay, BoundaryConfig{}, SimulationGrid{}), DomainError);
  BoundaryConfig bc;
  bc.emissivity = 1.5;
  EXPECT_THROW(simulate(MaterialParams{}, fixtures::e1_like(), bc, SimulationGrid{}), DomainError);
  SimulationGrid g;
  g.tau = 0.0;
  EXPECT_THROW(g.check(), DomainError);
}

TEST(CurveProductIntegral, MatchesQuadrature) {
  const MaterialParams p;
  const auto cur = make_curves(p, fixtures::product_a());
  const CurveProductIntegral h(cur.density, cur.specific_heat);
  // Composite Simpson with a fine step as the oracle.
  auto simpson = [&](double a, double b) {
    const int n = 200000;
    const double dx = (b - a) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double t = a + i * dx;
      s += w * cur.density(t) * cur.specific_heat(t);
    }
    return s * dx / 3.0;
  };
  for (auto [a, b] : {std::pair{20.0, 150.0}, {90.0, 1000.0}, {500.0, 1200.0}}) {
    const double exact = simpson(a, b);
    EXPECT_NEAR(h(b) - h(a), exact, 1e-6 * exact);
  }
}
