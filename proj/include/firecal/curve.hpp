#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "firecal/error.hpp"

namespace firecal {

struct CurvePoint {
  double temperature;
  double value;
};

/// Piecewise-linear function of temperature defined by ordered breakpoints.
///
/// Breakpoint temperatures must be non-decreasing. Two consecutive points with
/// the same temperature form a zero-width segment (a jump); evaluating exactly
/// at the jump returns the first of the two values. Outside the breakpoint
/// range the curve is held constant at the end values.
class PiecewiseLinear {
 public:
  PiecewiseLinear() = default;

  explicit PiecewiseLinear(std::vector<CurvePoint> points) : points_(std::move(points)) {
    if (points_.empty()) throw DomainError("piecewise-linear curve needs at least one point");
    for (std::size_t i = 1; i < points_.size(); ++i) {
      if (points_[i].temperature < points_[i - 1].temperature)
        throw DomainError("curve breakpoints must be sorted by temperature");
    }
  }

  std::span<const CurvePoint> points() const noexcept { return points_; }
  double front_temperature() const { return points_.front().temperature; }
  double back_temperature() const { return points_.back().temperature; }

  double operator()(double t) const {
    if (t <= points_.front().temperature) return points_.front().value;
    if (t >= points_.back().temperature) return points_.back().value;
    // first breakpoint with temperature >= t
    auto it = std::lower_bound(points_.begin(), points_.end(), t,
                               [](const CurvePoint& p, double x) { return p.temperature < x; });
    if (it->temperature == t) return it->value;
    const CurvePoint& hi = *it;
    const CurvePoint& lo = *(it - 1);
    const double w = (t - lo.temperature) / (hi.temperature - lo.temperature);
    return lo.value + w * (hi.value - lo.value);
  }

  /// Linear piece covering the open interval around `t`, as (lo, hi).
  /// Used to integrate products of curves exactly.
  std::pair<CurvePoint, CurvePoint> piece_containing(double t) const {
    if (points_.size() == 1 || t <= points_.front().temperature) {
      const auto& p = points_.front();
      return {p, p};
    }
    if (t >= points_.back().temperature) {
      const auto& p = points_.back();
      return {p, p};
    }
    auto it = std::upper_bound(points_.begin(), points_.end(), t,
                               [](double x, const CurvePoint& p) { return x < p.temperature; });
    return {*(it - 1), *it};
  }

 private:
  std::vector<CurvePoint> points_;
};

/// Value of the linear piece (lo, hi) at t, extended constantly for a degenerate piece.
inline double eval_piece(const std::pair<CurvePoint, CurvePoint>& piece, double t) {
  const auto& [lo, hi] = piece;
  if (hi.temperature == lo.temperature) return lo.value;
  const double w = (t - lo.temperature) / (hi.temperature - lo.temperature);
  return lo.value + w * (hi.value - lo.value);
}

}  // namespace firecal
