#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "network.hpp"

namespace hytraffic {

enum class ViolationKind {
  DuplicateRoad,
  DuplicateNode,
  DanglingNode,
  IsolatedNode,
  LaneCountOutOfRange,
  NonPositiveLength,
  NonPositiveSpeedLimit,
  SignOutOfRange,
  SignLaneOutOfRange,
  DanglingTurn,
  TurnLaneOutOfRange,
  InsertionShape,
  ExtractionShape,
  Disconnected,
  DanglingInputPoint,
  DanglingEndPoint,
  DeadEnd,
};

struct Violation {
  ViolationKind kind;
  std::string subject;  ///< id of the offending element
  std::string message;
};

inline constexpr int kMinLanes = 1;
inline constexpr int kMaxLanes = 5;

/// Collect every invariant violation of `net`. An empty result means the network is valid.
inline std::vector<Violation> validate_network(const RoadNetwork& net) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind k, const std::string& subject, std::string msg) {
    out.push_back({k, subject, std::move(msg)});
  };

  std::set<std::string> seen;
  for (const auto& r : net.roads())
    if (!seen.insert(r.id).second) add(ViolationKind::DuplicateRoad, r.id, "duplicate road id");
  seen.clear();
  for (const auto& n : net.nodes())
    if (!seen.insert(n.id).second) add(ViolationKind::DuplicateNode, n.id, "duplicate node id");

  std::map<NodeId, int> incidence;
  for (const auto& r : net.roads()) {
    if (r.lane_count < kMinLanes || r.lane_count > kMaxLanes)
      add(ViolationKind::LaneCountOutOfRange, r.id, "lane_count " + std::to_string(r.lane_count) + " not in [1,5]");
    if (!(r.length > 0.0)) add(ViolationKind::NonPositiveLength, r.id, "length must be > 0");
    if (!(r.speed_limit > 0.0)) add(ViolationKind::NonPositiveSpeedLimit, r.id, "speed_limit must be > 0");
    for (const auto* end : {&r.from_node, &r.to_node}) {
      if (!net.find_node(*end)) add(ViolationKind::DanglingNode, r.id, "endpoint references unknown node '" + *end + "'");
      ++incidence[*end];
    }
    for (const auto& s : r.signs) {
      if (s.position < 0.0 || s.position > r.length)
        add(ViolationKind::SignOutOfRange, r.id, "sign position outside road");
      for (int l : s.lanes)
        if (l < 0 || l >= r.lane_count) add(ViolationKind::SignLaneOutOfRange, r.id, "sign lane out of range");
      if (s.kind == SignKind::SpeedLimit && !(s.value > 0.0))
        add(ViolationKind::SignOutOfRange, r.id, "speed limit sign value must be > 0");
    }
  }

  for (const auto& n : net.nodes()) {
    if (incidence[n.id] == 0) add(ViolationKind::IsolatedNode, n.id, "node references no road");
    for (const auto& t : n.turn_map) {
      const Road* from = net.find_road(t.from_road);
      const Road* to = net.find_road(t.to_road);
      if (!from || !to || from->to_node != n.id || to->from_node != n.id) {
        add(ViolationKind::DanglingTurn, n.id, "turn " + t.from_road + "->" + t.to_road + " names a non-incident road");
        continue;
      }
      if (t.from_lane < 0 || t.from_lane >= from->lane_count || t.to_lane < 0 || t.to_lane >= to->lane_count)
        add(ViolationKind::TurnLaneOutOfRange, n.id, "turn lane index out of range");
    }
    if (n.kind == NodeKind::HighwayInsertion && net.incoming(n.id).size() < 2)
      add(ViolationKind::InsertionShape, n.id, "highway insertion needs at least 2 incoming roads");
    if (n.kind == NodeKind::HighwayExtraction && net.outgoing(n.id).size() < 2)
      add(ViolationKind::ExtractionShape, n.id, "highway extraction needs at least 2 outgoing roads");
    if (!net.incoming(n.id).empty() && net.outgoing(n.id).empty() && !net.sink_at(n.id))
      add(ViolationKind::DeadEnd, n.id, "roads end here but no end point absorbs them");
  }

  for (const auto& ip : net.input_points()) {
    const Road* r = net.find_road(ip.road);
    if (!r) {
      add(ViolationKind::DanglingInputPoint, ip.id, "input point references unknown road '" + ip.road + "'");
      continue;
    }
    for (int l : ip.lanes)
      if (l < 0 || l >= r->lane_count) add(ViolationKind::DanglingInputPoint, ip.id, "input point lane out of range");
    if (ip.destination && !net.find_sink(*ip.destination))
      add(ViolationKind::DanglingInputPoint, ip.id, "unknown destination '" + *ip.destination + "'");
  }
  for (const auto& e : net.end_points())
    if (!net.find_node(e.node)) add(ViolationKind::DanglingEndPoint, e.id, "end point references unknown node '" + e.node + "'");

  // Weak connectivity over the (road, node) incidence graph.
  if (!net.nodes().empty()) {
    std::map<NodeId, NodeId> parent;
    auto find = [&](NodeId x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& n : net.nodes()) parent[n.id] = n.id;
    for (const auto& r : net.roads()) {
      if (!parent.count(r.from_node) || !parent.count(r.to_node)) continue;
      parent[find(r.from_node)] = find(r.to_node);
    }
    const NodeId root = find(net.nodes().front().id);
    for (const auto& n : net.nodes())
      if (find(n.id) != root) {
        add(ViolationKind::Disconnected, n.id, "node not connected to '" + net.nodes().front().id + "'");
      }
  }
  return out;
}

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::DuplicateRoad: return "DuplicateRoad";
    case ViolationKind::DuplicateNode: return "DuplicateNode";
    case ViolationKind::DanglingNode: return "DanglingNode";
    case ViolationKind::IsolatedNode: return "IsolatedNode";
    case ViolationKind::LaneCountOutOfRange: return "LaneCountOutOfRange";
    case ViolationKind::NonPositiveLength: return "NonPositiveLength";
    case ViolationKind::NonPositiveSpeedLimit: return "NonPositiveSpeedLimit";
    case ViolationKind::SignOutOfRange: return "SignOutOfRange";
    case ViolationKind::SignLaneOutOfRange: return "SignLaneOutOfRange";
    case ViolationKind::DanglingTurn: return "DanglingTurn";
    case ViolationKind::TurnLaneOutOfRange: return "TurnLaneOutOfRange";
    case ViolationKind::InsertionShape: return "InsertionShape";
    case ViolationKind::ExtractionShape: return "ExtractionShape";
    case ViolationKind::Disconnected: return "Disconnected";
    case ViolationKind::DanglingInputPoint: return "DanglingInputPoint";
    case ViolationKind::DanglingEndPoint: return "DanglingEndPoint";
    case ViolationKind::DeadEnd: return "DeadEnd";
  }
  return "?";
}

}  // namespace hytraffic
