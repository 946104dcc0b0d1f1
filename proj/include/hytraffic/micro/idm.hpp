/// @file idm.hpp
/// @brief Intelligent Driver Model acceleration and its steady-state gap.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "../error.hpp"

namespace hytraffic {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Driving style of one driver. Defaults are the usual passenger-car settings
/// from the IDM/MOBIL literature.
struct DriverParams {
  double v0 = 33.33;    ///< desired speed [m/s]
  double T = 1.6;       ///< desired time headway [s]
  double a_max = 0.73;  ///< maximum acceleration [m/s^2]
  double b = 1.67;      ///< comfortable deceleration [m/s^2]
  double delta = 4.0;   ///< acceleration exponent
  double s0 = 2.0;      ///< minimum bumper-to-bumper gap [m]
  double p = 0.3;       ///< politeness factor
  double da_th = 0.1;   ///< lane-change incentive threshold [m/s^2]
  double b_safe = 4.0;  ///< maximum deceleration imposed on the new follower [m/s^2]

  /// Empty string if valid, otherwise the name of the first offending field.
  std::string invalid_field() const {
    if (!(v0 > 0)) return "v0";
    if (!(T > 0)) return "T";
    if (!(a_max > 0)) return "a_max";
    if (!(b > 0)) return "b";
    if (!(delta >= 1)) return "delta";
    if (!(s0 > 0)) return "s0";
    if (!(p >= 0 && p <= 1)) return "p";
    if (!(da_th >= 0)) return "da_th";
    if (!(b_safe > 0)) return "b_safe";
    return {};
  }
  bool valid() const { return invalid_field().empty(); }

  bool operator==(const DriverParams&) const = default;
};

/// Desired dynamical gap s*, floored at s0.
inline double desired_gap(double v, double dv, const DriverParams& p) {
  const double s = p.s0 + v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b));
  return std::max(p.s0, s);
}

/// IDM acceleration for own speed `v`, bumper-to-bumper gap `s` (may be +inf) and
/// approach rate `dv` = own speed minus leader speed.
inline double idm_acceleration(double v, double s, double dv, const DriverParams& p) {
  if (!(s > 0.0)) throw NonPositiveGap(s);
  const double free_term = std::pow(v / p.v0, p.delta);
  if (std::isinf(s)) return p.a_max * (1.0 - free_term);
  const double ratio = desired_gap(v, dv, p) / s;
  return p.a_max * (1.0 - free_term - ratio * ratio);
}

/// Gap at which a driver at speed `v` behind a leader at the same speed keeps a
/// constant speed.
inline double equilibrium_gap(double v, const DriverParams& p) {
  if (v >= p.v0) throw DesiredSpeedReached(v);
  return desired_gap(v, 0.0, p) / std::sqrt(1.0 - std::pow(v / p.v0, p.delta));
}

}  // namespace hytraffic
