/// @file network.hpp
/// @brief Semantic road network: roads, lanes, typed nodes, turn maps and connectors.
///
/// The network is modelled at a semantic level only. Lanes carry an index, not a
/// geometry; lane 0 is the leftmost lane and lane_count-1 the rightmost one.
#pragma once

#include <algorithm>
#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hytraffic {

using RoadId = std::string;
using NodeId = std::string;

enum class NodeKind { Crossroads, Roundabout, HighwayInsertion, HighwayExtraction };
enum class SignKind { Stop, SpeedLimit, Yield };

struct VerticalSign {
  SignKind kind = SignKind::Stop;
  double value = 0.0;     ///< speed in m/s for SpeedLimit, unused otherwise
  double position = 0.0;  ///< meters from road start
  std::vector<int> lanes; ///< empty means all lanes

  bool applies_to(int lane) const {
    return lanes.empty() || std::find(lanes.begin(), lanes.end(), lane) != lanes.end();
  }
  bool operator==(const VerticalSign&) const = default;
};

struct Road {
  RoadId id;
  NodeId from_node;
  NodeId to_node;
  double length = 0.0;
  int lane_count = 1;
  double speed_limit = 0.0;
  std::vector<VerticalSign> signs;  ///< sorted by position

  bool operator==(const Road&) const = default;
};

/// One permitted movement through a node.
struct Turn {
  RoadId from_road;
  int from_lane = 0;
  RoadId to_road;
  int to_lane = 0;

  auto operator<=>(const Turn&) const = default;
};

struct Node {
  NodeId id;
  NodeKind kind = NodeKind::Crossroads;
  std::vector<Turn> turn_map;  ///< sorted, unique

  bool operator==(const Node&) const = default;
};

/// Lane-level connector where traffic enters the network.
struct InputPoint {
  std::string id;
  RoadId road;
  std::vector<int> lanes;
  std::optional<std::string> destination;  ///< sink id

  bool operator==(const InputPoint&) const = default;
};

/// Destruction connector: absorbs vehicles that reach the end of roads entering `node`.
struct EndPoint {
  std::string id;
  NodeId node;

  bool operator==(const EndPoint&) const = default;
};

/// Immutable after construction; lookups are by identifier.
class RoadNetwork {
public:
  RoadNetwork() = default;
  RoadNetwork(std::vector<Road> roads, std::vector<Node> nodes,
              std::vector<InputPoint> input_points = {}, std::vector<EndPoint> end_points = {})
      : m_roads(std::move(roads)), m_nodes(std::move(nodes)),
        m_inputs(std::move(input_points)), m_ends(std::move(end_points)) {
    for (auto& r : m_roads) {
      std::sort(r.signs.begin(), r.signs.end(),
                [](const VerticalSign& a, const VerticalSign& b) { return a.position < b.position; });
    }
    for (auto& n : m_nodes) {
      std::sort(n.turn_map.begin(), n.turn_map.end());
      n.turn_map.erase(std::unique(n.turn_map.begin(), n.turn_map.end()), n.turn_map.end());
    }
    for (std::size_t i = 0; i < m_roads.size(); ++i) m_roadIndex.try_emplace(m_roads[i].id, i);
    for (std::size_t i = 0; i < m_nodes.size(); ++i) m_nodeIndex.try_emplace(m_nodes[i].id, i);
    for (std::size_t i = 0; i < m_ends.size(); ++i) m_sinkIndex.try_emplace(m_ends[i].id, i);
    for (std::size_t i = 0; i < m_roads.size(); ++i) {
      m_outgoing[m_roads[i].from_node].push_back(i);
      m_incoming[m_roads[i].to_node].push_back(i);
    }
    auto byId = [this](std::size_t a, std::size_t b) { return m_roads[a].id < m_roads[b].id; };
    for (auto& [_, v] : m_outgoing) std::sort(v.begin(), v.end(), byId);
    for (auto& [_, v] : m_incoming) std::sort(v.begin(), v.end(), byId);
  }

  const std::vector<Road>& roads() const noexcept { return m_roads; }
  const std::vector<Node>& nodes() const noexcept { return m_nodes; }
  const std::vector<InputPoint>& input_points() const noexcept { return m_inputs; }
  const std::vector<EndPoint>& end_points() const noexcept { return m_ends; }

  const Road* find_road(const RoadId& id) const {
    auto it = m_roadIndex.find(id);
    return it == m_roadIndex.end() ? nullptr : &m_roads[it->second];
  }
  const Node* find_node(const NodeId& id) const {
    auto it = m_nodeIndex.find(id);
    return it == m_nodeIndex.end() ? nullptr : &m_nodes[it->second];
  }
  const EndPoint* find_sink(const std::string& id) const {
    auto it = m_sinkIndex.find(id);
    return it == m_sinkIndex.end() ? nullptr : &m_ends[it->second];
  }
  const Road& road(const RoadId& id) const {
    if (auto* r = find_road(id)) return *r;
    throw std::out_of_range("unknown road '" + id + "'");
  }
  const Node& node(const NodeId& id) const {
    if (auto* n = find_node(id)) return *n;
    throw std::out_of_range("unknown node '" + id + "'");
  }

  /// Roads leaving `node`, sorted by id.
  std::vector<const Road*> outgoing(const NodeId& node) const { return collect(m_outgoing, node); }
  /// Roads entering `node`, sorted by id.
  std::vector<const Road*> incoming(const NodeId& node) const { return collect(m_incoming, node); }

  /// First sink attached to `node`, if any.
  const EndPoint* sink_at(const NodeId& node) const {
    for (const auto& e : m_ends)
      if (e.node == node) return &e;
    return nullptr;
  }

  /// A node is pass-through when exactly one road enters and one road leaves it.
  bool is_pass_through(const NodeId& node) const {
    return incoming(node).size() == 1 && outgoing(node).size() == 1 && sink_at(node) == nullptr;
  }

  /// Turn targets permitted from (road, lane) onto `to_road`.
  std::vector<int> turn_targets(const RoadId& from_road, int lane, const RoadId& to_road) const {
    std::vector<int> out;
    const Road* r = find_road(from_road);
    if (!r) return out;
    const Node* n = find_node(r->to_node);
    if (!n) return out;
    for (const auto& t : n->turn_map)
      if (t.from_road == from_road && t.from_lane == lane && t.to_road == to_road) out.push_back(t.to_lane);
    return out;
  }

  /// True if some lane of `from_road` may continue onto `to_road`.
  bool connects(const RoadId& from_road, const RoadId& to_road) const {
    const Road* r = find_road(from_road);
    if (!r) return false;
    const Node* n = find_node(r->to_node);
    if (!n) return false;
    return std::any_of(n->turn_map.begin(), n->turn_map.end(), [&](const Turn& t) {
      return t.from_road == from_road && t.to_road == to_road;
    });
  }

  bool operator==(const RoadNetwork& o) const {
    return m_roads == o.m_roads && m_nodes == o.m_nodes && m_inputs == o.m_inputs && m_ends == o.m_ends;
  }

private:
  std::vector<const Road*> collect(const std::map<NodeId, std::vector<std::size_t>>& m,
                                   const NodeId& node) const {
    std::vector<const Road*> out;
    if (auto it = m.find(node); it != m.end())
      for (auto i : it->second) out.push_back(&m_roads[i]);
    return out;
  }

  std::vector<Road> m_roads;
  std::vector<Node> m_nodes;
  std::vector<InputPoint> m_inputs;
  std::vector<EndPoint> m_ends;
  std::map<RoadId, std::size_t> m_roadIndex;
  std::map<NodeId, std::size_t> m_nodeIndex;
  std::map<std::string, std::size_t> m_sinkIndex;
  std::map<NodeId, std::vector<std::size_t>> m_outgoing;
  std::map<NodeId, std::vector<std::size_t>> m_incoming;
};

/// Speed limit in effect at `position` on `lane`: the last SpeedLimit sign at or
/// before the position, otherwise the road's default limit.
inline double speed_limit_at(const Road& road, int lane, double position) {
  double limit = road.speed_limit;
  for (const auto& s : road.signs) {
    if (s.position > position) break;
    if (s.kind == SignKind::SpeedLimit && s.applies_to(lane)) limit = s.value;
  }
  return limit;
}

/// Lowest speed limit in effect anywhere within [start, end) on `lane`.
inline double min_speed_limit(const Road& road, int lane, double start, double end) {
  double limit = speed_limit_at(road, lane, start);
  for (const auto& s : road.signs) {
    if (s.position <= start) continue;
    if (s.position >= end) break;
    if (s.kind == SignKind::SpeedLimit && s.applies_to(lane)) limit = std::min(limit, s.value);
  }
  return limit;
}

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Crossroads: return "crossroads";
    case NodeKind::Roundabout: return "roundabout";
    case NodeKind::HighwayInsertion: return "highway_insertion";
    case NodeKind::HighwayExtraction: return "highway_extraction";
  }
  return "?";
}

inline const char* to_string(SignKind k) {
  switch (k) {
    case SignKind::Stop: return "stop";
    case SignKind::SpeedLimit: return "speed_limit";
    case SignKind::Yield: return "yield";
  }
  return "?";
}

}  // namespace hytraffic
