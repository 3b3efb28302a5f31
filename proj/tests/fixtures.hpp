#pragma once

#include "firecal/heat_solver.hpp"

namespace fixtures {

using namespace firecal;

inline MaterialCurves particle_board() {
  return {PiecewiseLinear({{0, 0.12}, {200, 0.12}, {350, 0.08}, {800, 0.2}, {1200, 0.35}}),
          PiecewiseLinear({{0, 1700}, {1200, 1700}}),
          PiecewiseLinear({{0, 633}, {200, 633}, {400, 200}, {1200, 150}})};
}

inline ProductConfig product_a() { return {"A", 680.0, 0.0125}; }

/// One calibrated board on a particle board backing, sensor behind the board.
inline Layup e1_like() {
  Layup lay;
  lay.layers.push_back({CalibratedLayer{product_a(), 0}, 0.0125});
  lay.layers.push_back({particle_board(), 0.019});
  lay.sensors = {1};
  return lay;
}

inline MaterialCurves constant_material(double lambda, double c, double rho) {
  return {PiecewiseLinear({{0, lambda}}), PiecewiseLinear({{0, c}}), PiecewiseLinear({{0, rho}})};
}

}  // namespace fixtures
