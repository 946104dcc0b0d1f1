#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "../error.hpp"
#include "network.hpp"

namespace hytraffic {

/// Ordered roads from origin to the road entering the destination sink's node.
/// A route without destination is a "cruise" route: once exhausted, the vehicle
/// takes the default continuation at each node.
struct Route {
  std::vector<RoadId> roads;
  std::optional<std::string> destination;

  bool operator==(const Route&) const = default;
};

inline double free_flow_time(const Road& r, double network_free_speed) {
  return r.length / std::min(r.speed_limit, network_free_speed);
}

namespace detail {
inline bool nearly_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}
// (cost, path) with cost ties resolved by lexicographic path order.
inline bool route_less(double ca, const std::vector<RoadId>& pa, double cb, const std::vector<RoadId>& pb) {
  if (!nearly_equal(ca, cb)) return ca < cb;
  return pa < pb;
}
}  // namespace detail

/// Minimum free-flow travel-time route. Ties between equal-time paths go to the
/// lexicographically smallest sequence of road ids.
inline Route compute_route(const RoadNetwork& net, const RoadId& origin, const std::string& destination,
                           double network_free_speed = std::numeric_limits<double>::infinity()) {
  const Road* start = net.find_road(origin);
  const EndPoint* sink = net.find_sink(destination);
  if (!start || !sink) throw Unreachable(origin, destination);

  struct Label {
    double cost;
    std::vector<RoadId> path;
  };
  std::map<RoadId, Label> best;
  auto cmp = [](const Label& a, const Label& b) { return detail::route_less(a.cost, a.path, b.cost, b.path); };
  std::set<Label, decltype(cmp)> open(cmp);

  Label first{free_flow_time(*start, network_free_speed), {origin}};
  best[origin] = first;
  open.insert(first);
  std::optional<Label> found;
  while (!open.empty()) {
    Label cur = *open.begin();
    open.erase(open.begin());
    const RoadId& here = cur.path.back();
    if (auto it = best.find(here); it != best.end() && it->second.path != cur.path) continue;
    const Road& r = net.road(here);
    if (r.to_node == sink->node) {
      found = cur;
      break;
    }
    for (const Road* next : net.outgoing(r.to_node)) {
      if (!net.connects(here, next->id)) continue;
      if (std::find(cur.path.begin(), cur.path.end(), next->id) != cur.path.end()) continue;
      Label cand{cur.cost + free_flow_time(*next, network_free_speed), cur.path};
      cand.path.push_back(next->id);
      auto it = best.find(next->id);
      if (it == best.end() || cmp(cand, it->second)) {
        if (it != best.end()) open.erase(it->second);
        best[next->id] = cand;
        open.insert(cand);
      }
    }
  }
  if (!found) throw Unreachable(origin, destination);
  return Route{found->path, destination};
}

/// Lanes of `road` from which the node's turn map permits entering `next_road`.
inline std::set<int> lanes_to_destination(const RoadNetwork& net, const RoadId& road, const RoadId& next_road) {
  std::set<int> out;
  const Road* r = net.find_road(road);
  if (!r) return out;
  const Node* n = net.find_node(r->to_node);
  if (!n) return out;
  for (const auto& t : n->turn_map)
    if (t.from_road == road && t.to_road == next_road) out.insert(t.from_lane);
  return out;
}

/// Same query phrased against a route: the next road is the one following `road` in it.
inline std::set<int> lanes_to_destination(const RoadNetwork& net, const RoadId& road, const NodeId& node,
                                          const Route& route) {
  const Road* r = net.find_road(road);
  if (!r || r->to_node != node) return {};
  auto it = std::find(route.roads.begin(), route.roads.end(), road);
  if (it == route.roads.end() || std::next(it) == route.roads.end()) return {};
  return lanes_to_destination(net, road, *std::next(it));
}

/// Default continuation used by cruise vehicles: smallest road id reachable from
/// (road, lane), or from any lane if that lane has no permitted movement.
inline std::optional<RoadId> default_continuation(const RoadNetwork& net, const RoadId& road, int lane) {
  const Road& r = net.road(road);
  const Node* n = net.find_node(r.to_node);
  if (!n) return std::nullopt;
  std::optional<RoadId> any;
  for (const auto& t : n->turn_map) {
    if (t.from_road != road) continue;
    if (t.from_lane == lane) return t.to_road;  // turn_map is sorted by to_road within a lane
    if (!any || t.to_road < *any) any = t.to_road;
  }
  return any;
}

/// True if every consecutive pair of roads shares a node with a permitted turn.
inline bool is_valid_route(const RoadNetwork& net, const Route& route) {
  if (route.roads.empty()) return false;
  for (const auto& id : route.roads)
    if (!net.find_road(id)) return false;
  for (std::size_t i = 0; i + 1 < route.roads.size(); ++i)
    if (!net.connects(route.roads[i], route.roads[i + 1])) return false;
  return true;
}

}  // namespace hytraffic
