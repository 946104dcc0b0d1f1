#pragma once

#include <cstdint>
#include <limits>

#include "../network/routing.hpp"
#include "idm.hpp"

namespace hytraffic {

using VehicleId = std::uint64_t;

/// Microscopic particle. `position` is the front bumper, measured from the road start.
struct Vehicle {
  VehicleId id = 0;
  RoadId road;
  int lane = 0;
  double position = 0.0;
  double speed = 0.0;
  double length = 4.0;
  DriverParams params{};
  Route route{};
  std::size_t route_index = 0;  ///< index of `road` in route.roads while following it

  // Memory.
  double previous_gap = kInf;
  double cleared_stop = -kInf;  ///< position of the last stop line the vehicle halted at, on `road`

  double rear() const { return position - length; }
  bool operator==(const Vehicle&) const = default;
};

/// Road the vehicle intends to take after its current one, if its route says so.
inline std::optional<RoadId> planned_next_road(const Vehicle& v) {
  if (v.route_index < v.route.roads.size() && v.route.roads[v.route_index] == v.road &&
      v.route_index + 1 < v.route.roads.size())
    return v.route.roads[v.route_index + 1];
  return std::nullopt;
}

/// True when the vehicle is on the last road of a route that ends at a sink.
inline bool on_final_road(const Vehicle& v) {
  return v.route.destination && !v.route.roads.empty() && v.route_index + 1 == v.route.roads.size() &&
         v.route.roads.back() == v.road;
}

}  // namespace hytraffic
