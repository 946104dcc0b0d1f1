/// @file behavior.hpp
/// @brief Vehicle behavior as a chain of responsibility: navigation, overtaking, acceleration.
///
/// Navigation forces a lane change when the current lane does not lead to the next
/// road of the route; only the safety criterion gates it. Otherwise MOBIL decides
/// whether to overtake. Both paths end with an IDM acceleration against the
/// effective leader, which may be a virtual standing obstacle (stop line, blocked
/// boundary) folded into the perception.
#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <set>

#include "mobil.hpp"
#include "vehicle.hpp"

namespace hytraffic {

inline constexpr double kNavigationHorizon = 300.0;

struct NavigationContext {
  std::optional<std::set<int>> permitted;  ///< lanes leading to the next route road; nullopt when unconstrained
  double distance_to_node = kInf;
  double horizon = kNavigationHorizon;

  bool active() const { return permitted && !permitted->empty() && distance_to_node < horizon; }
};

struct MicroInfluence {
  VehicleId vehicle = 0;
  double acceleration = 0.0;
  LaneChangeDecision lane_change = LaneChangeDecision::Stay;
  bool mandatory = false;

  bool operator==(const MicroInfluence&) const = default;
};

/// Driver parameters with the desired speed capped by the local speed limit.
inline DriverParams effective_params(const DriverParams& p, const Perception& per) {
  DriverParams out = p;
  out.v0 = std::min(p.v0, per.speed_limit);
  return out;
}

/// Speed a free driver would keep here, given a lower limit ahead and comfortable braking.
inline double anticipated_free_speed(double v0, const Perception& per, double b) {
  double cap = std::min(v0, per.speed_limit);
  if (per.next_limit < cap && std::isfinite(per.next_limit_distance))
    cap = std::min(cap, std::sqrt(per.next_limit * per.next_limit + 2.0 * b * per.next_limit_distance));
  return cap;
}

/// IDM acceleration against the lane's leader, bounded by the braking needed to
/// reach a lower limit ahead.
inline double longitudinal_acceleration(double v, const LaneNeighbors& lane, const Perception& per,
                                        const DriverParams& eff) {
  double a = detail::idm_clamped(v, lane.leader_gap, v - lane.leader_speed, eff);
  const double u = per.next_limit;
  const double d = per.next_limit_distance;
  if (u < v && d > 0.0 && std::isfinite(d) && v > std::sqrt(u * u + 2.0 * eff.b * d))
    a = std::min(a, (u * u - v * v) / (2.0 * d));
  return a;
}

inline MicroInfluence behavior_chain(const Vehicle& veh, const Perception& per, const NavigationContext& nav) {
  const DriverParams eff = effective_params(veh.params, per);
  MicroInfluence out;
  out.vehicle = veh.id;

  bool decided = false;
  std::array<bool, 2> allowed{true, true};
  if (nav.active()) {
    const auto& ok = *nav.permitted;
    if (!ok.count(veh.lane)) {
      // Nearest permitted lane; ties go right.
      int target = *ok.begin();
      for (int l : ok)
        if (std::abs(l - veh.lane) <= std::abs(target - veh.lane)) target = l;
      const Side side = target > veh.lane ? Side::Right : Side::Left;
      const auto& lane = per.lane(side);
      if (lane && lane_change_safe(*lane, veh.speed, eff)) {
        out.lane_change = to_decision(side);
        out.mandatory = true;
      }
      decided = true;
    } else {
      allowed[static_cast<int>(Side::Left)] = ok.count(veh.lane - 1) > 0;
      allowed[static_cast<int>(Side::Right)] = ok.count(veh.lane + 1) > 0;
    }
  }
  if (!decided) out.lane_change = mobil_decide(per, veh.speed, eff, allowed);

  double a = longitudinal_acceleration(veh.speed, per.current, per, eff);
  if (out.lane_change != LaneChangeDecision::Stay) {
    const Side side = out.lane_change == LaneChangeDecision::Left ? Side::Left : Side::Right;
    // The reaction may still refuse the change, so the acceleration must suit both lanes.
    a = std::min(a, longitudinal_acceleration(veh.speed, *per.lane(side), per, eff));
  }
  out.acceleration = a;
  return out;
}

}  // namespace hytraffic
