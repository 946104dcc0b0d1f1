/// @file topology.hpp
/// @brief Where clusters meet: boundary points, neighbors and macro eligibility.
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "cluster.hpp"

namespace hytraffic {

/// A point of the network: road and distance from its start.
using NetPoint = std::pair<RoadId, double>;

inline constexpr double kPointTolerance = 1e-9;

/// Point right after the end of `c` in driving direction: the end itself when it lies
/// inside a road, else the start of the only road leaving the end node.
inline std::optional<NetPoint> downstream_point(const RoadNetwork& net, const Cluster& c) {
  const auto& last = c.last();
  const Road& road = net.road(last.road);
  if (last.end < road.length - kPointTolerance) return NetPoint{last.road, last.end};
  if (net.sink_at(road.to_node)) return std::nullopt;
  auto out = net.outgoing(road.to_node);
  if (out.size() != 1) return std::nullopt;
  return NetPoint{out.front()->id, 0.0};
}

/// Point right before the start of `c`: the end of the only road entering the start
/// node, or the same road when the cluster starts mid-road. Returned as
/// (road, position) on the upstream side.
inline std::optional<NetPoint> upstream_point(const RoadNetwork& net, const Cluster& c) {
  const auto& first = c.first();
  if (first.start > kPointTolerance) return NetPoint{first.road, first.start};
  const Road& road = net.road(first.road);
  auto in = net.incoming(road.from_node);
  if (in.size() != 1) return std::nullopt;
  return NetPoint{in.front()->id, in.front()->length};
}

/// True if some piece of `c` ends exactly at `p` (upstream side of a boundary).
inline bool ends_at(const Cluster& c, const NetPoint& p) {
  const auto& last = c.last();
  return last.road == p.first && std::abs(last.end - p.second) <= kPointTolerance;
}

/// True if `c` starts exactly at `p`.
inline bool starts_at(const Cluster& c, const NetPoint& p) {
  const auto& first = c.first();
  return first.road == p.first && std::abs(first.start - p.second) <= kPointTolerance;
}

/// True when `b` begins where `a` ends.
inline bool adjacent(const RoadNetwork& net, const Cluster& a, const Cluster& b) {
  auto p = downstream_point(net, a);
  return p && starts_at(b, *p);
}

/// Macroscopic clusters must have a single entry and a single exit so boundary flux
/// is well defined: internal joints are pass-through nodes, the start node has no
/// other way in, and the end node has no other way out (or absorbs everything).
inline bool can_be_macro(const RoadNetwork& net, const Cluster& c) {
  for (std::size_t i = 0; i + 1 < c.extent.size(); ++i) {
    const auto& a = c.extent[i];
    const auto& b = c.extent[i + 1];
    const Road& ra = net.road(a.road);
    if (a.end < ra.length - kPointTolerance) {
      if (b.road != a.road || std::abs(b.start - a.end) > kPointTolerance) return false;
      continue;
    }
    if (!net.is_pass_through(ra.to_node) || b.start > kPointTolerance) return false;
  }
  const auto& first = c.first();
  if (first.start <= kPointTolerance) {
    const Road& r = net.road(first.road);
    if (net.incoming(r.from_node).size() > 1 || net.outgoing(r.from_node).size() != 1) return false;
  }
  const auto& last = c.last();
  const Road& r = net.road(last.road);
  if (last.end >= r.length - kPointTolerance) {
    if (net.sink_at(r.to_node)) return true;
    if (net.incoming(r.to_node).size() != 1 || net.outgoing(r.to_node).size() > 1) return false;
  }
  return true;
}

/// Concatenates extents, joining pieces that continue on the same road.
inline std::vector<ExtentPiece> join_extents(std::vector<ExtentPiece> a, const std::vector<ExtentPiece>& b) {
  for (const auto& p : b) {
    if (!a.empty() && a.back().road == p.road && std::abs(a.back().end - p.start) <= kPointTolerance)
      a.back().end = p.end;
    else
      a.push_back(p);
  }
  return a;
}

}  // namespace hytraffic
