/// @file mobil.hpp
/// @brief MOBIL lane-change decision on top of IDM.
#pragma once

#include <array>
#include <optional>

#include "idm.hpp"

namespace hytraffic {

/// What a vehicle sees in one lane: the leader ahead and the follower behind.
/// Gaps are bumper-to-bumper and +inf when nobody is within the perception horizon.
struct LaneNeighbors {
  double leader_gap = kInf;
  double leader_speed = 0.0;
  double follower_gap = kInf;  ///< follower front bumper to own rear bumper
  double follower_speed = 0.0;
  DriverParams follower_params{};

  bool has_follower() const { return !std::isinf(follower_gap); }
};

enum class Side : int { Left = 0, Right = 1 };

/// Inputs of the lane-change and acceleration decisions.
struct Perception {
  double own_length = 4.0;
  LaneNeighbors current;
  std::array<std::optional<LaneNeighbors>, 2> adjacent;  ///< indexed by Side; empty when the lane does not exist
  double speed_limit = kInf;                             ///< limit in effect at the front bumper
  double next_limit = kInf;                              ///< lower limit ahead, if any
  double next_limit_distance = kInf;

  const std::optional<LaneNeighbors>& lane(Side s) const { return adjacent[static_cast<int>(s)]; }
};

enum class LaneChangeDecision { Stay, Left, Right };

inline LaneChangeDecision to_decision(Side s) {
  return s == Side::Left ? LaneChangeDecision::Left : LaneChangeDecision::Right;
}

namespace detail {
// Gaps are clamped away from zero before calling IDM; a zero gap is an overlap the
// caller has already resolved.
inline double idm_clamped(double v, double s, double dv, const DriverParams& p) {
  return idm_acceleration(v, std::max(s, 1e-3), dv, p);
}
}  // namespace detail

/// Acceleration the new follower in `target` would have after the change.
inline double new_follower_acceleration_after(const LaneNeighbors& target, double v) {
  if (!target.has_follower()) return 0.0;
  return detail::idm_clamped(target.follower_speed, target.follower_gap, target.follower_speed - v,
                             target.follower_params);
}

/// Safety criterion: the prospective new follower is not forced to brake harder
/// than b_safe, and the change does not create an overlap.
inline bool lane_change_safe(const LaneNeighbors& target, double v, const DriverParams& params) {
  if (!(target.leader_gap > 0.0) || !(target.follower_gap > 0.0)) return false;
  if (!target.has_follower()) return true;
  return new_follower_acceleration_after(target, v) >= -params.b_safe;
}

/// Incentive of moving from the current lane into `target`.
inline double lane_change_incentive(const Perception& per, const LaneNeighbors& target, double v,
                                    const DriverParams& params) {
  const auto& cur = per.current;
  const double len = per.own_length;
  const double a_c = detail::idm_clamped(v, cur.leader_gap, v - cur.leader_speed, params);
  const double at_c = detail::idm_clamped(v, target.leader_gap, v - target.leader_speed, params);

  double gain_new = 0.0;
  if (target.has_follower()) {
    const double vn = target.follower_speed;
    const double a_n = detail::idm_clamped(vn, target.follower_gap + len + target.leader_gap,
                                           vn - target.leader_speed, target.follower_params);
    const double at_n = new_follower_acceleration_after(target, v);
    gain_new = at_n - a_n;
  }
  double gain_old = 0.0;
  if (cur.has_follower()) {
    const double vo = cur.follower_speed;
    const double a_o = detail::idm_clamped(vo, cur.follower_gap, vo - v, cur.follower_params);
    const double at_o = detail::idm_clamped(vo, cur.follower_gap + len + cur.leader_gap,
                                            vo - cur.leader_speed, cur.follower_params);
    gain_old = at_o - a_o;
  }
  return at_c - a_c + params.p * (gain_new + gain_old);
}

/// Symmetric MOBIL restricted to the sides marked in `allowed`.
inline LaneChangeDecision mobil_decide(const Perception& per, double v, const DriverParams& params,
                                       std::array<bool, 2> allowed = {true, true}) {
  std::optional<double> best;
  LaneChangeDecision choice = LaneChangeDecision::Stay;
  // Right is evaluated first so that it wins exact ties.
  for (Side side : {Side::Right, Side::Left}) {
    if (!allowed[static_cast<int>(side)]) continue;
    const auto& target = per.lane(side);
    if (!target) continue;
    if (!lane_change_safe(*target, v, params)) continue;
    const double incentive = lane_change_incentive(per, *target, v, params);
    if (!(incentive > params.da_th)) continue;
    if (!best || incentive > *best) {
      best = incentive;
      choice = to_decision(side);
    }
  }
  return choice;
}

}  // namespace hytraffic
