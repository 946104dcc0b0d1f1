/// @file perception.hpp
/// @brief Neighbor lookup for microscopic vehicles.
///
/// The index sorts vehicles per (road, lane) by front-bumper position. Leaders in the
/// current lane are searched along the road and onward across nodes following the
/// vehicle's next road, up to the perception horizon. Adjacent-lane neighbors and
/// followers are searched on the current road only.
#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <vector>

#include "../network/network.hpp"
#include "mobil.hpp"
#include "vehicle.hpp"

namespace hytraffic {

inline constexpr double kPerceptionHorizon = 200.0;

/// Next road a vehicle will drive onto at the end of its current road, if any.
/// Vehicles without a remaining route take the default continuation unless the node
/// has a sink, which absorbs them.
inline std::optional<RoadId> next_road_for(const RoadNetwork& net, const Vehicle& v) {
  if (auto next = planned_next_road(v)) return next;
  if (on_final_road(v)) return std::nullopt;
  const Road& r = net.road(v.road);
  if (net.sink_at(r.to_node)) return std::nullopt;
  return default_continuation(net, v.road, v.lane);
}

/// Lane entered on `next` when leaving (road, lane): the permitted target of that lane,
/// else the target of the nearest lane that has one.
inline int entry_lane(const RoadNetwork& net, const RoadId& road, int lane, const RoadId& next) {
  if (auto t = net.turn_targets(road, lane, next); !t.empty()) return t.front();
  const Road& r = net.road(road);
  for (int d = 1; d < r.lane_count; ++d)
    for (int l : {lane + d, lane - d}) {
      if (l < 0 || l >= r.lane_count) continue;
      if (auto t = net.turn_targets(road, l, next); !t.empty()) return t.front();
    }
  return std::min(lane, net.road(next).lane_count - 1);
}

struct Obstacle {
  double position = 0.0;
  double speed = 0.0;
};

class MicroIndex {
public:
  explicit MicroIndex(const RoadNetwork& net) : m_net(&net) {
    for (const auto& r : net.roads()) m_lanes[r.id].resize(static_cast<std::size_t>(r.lane_count));
  }

  void add(const Vehicle& v) { lane_vec(v.road, v.lane).push_back(&v); }

  /// Virtual obstacle across all lanes of `road`: its rear at `position`, moving at `speed`.
  void add_obstacle(const RoadId& road, double position, double speed = 0.0) {
    m_obstacles[road].push_back({position, speed});
  }

  void finalize() {
    for (auto& [_, lanes] : m_lanes)
      for (auto& l : lanes) std::sort(l.begin(), l.end(), order);
    for (auto& [_, obs] : m_obstacles)
      std::sort(obs.begin(), obs.end(), [](const Obstacle& a, const Obstacle& b) {
        return a.position != b.position ? a.position < b.position : a.speed < b.speed;
      });
  }

  std::span<const Vehicle* const> lane(const RoadId& road, int lane) const {
    auto it = m_lanes.find(road);
    if (it == m_lanes.end() || lane < 0 || lane >= static_cast<int>(it->second.size())) return {};
    return it->second[static_cast<std::size_t>(lane)];
  }
  std::span<const Obstacle> obstacles(const RoadId& road) const {
    auto it = m_obstacles.find(road);
    if (it == m_obstacles.end()) return {};
    return it->second;
  }
  const RoadNetwork& network() const { return *m_net; }

  static bool order(const Vehicle* a, const Vehicle* b) {
    return a->position != b->position ? a->position < b->position : a->id < b->id;
  }

private:
  std::vector<const Vehicle*>& lane_vec(const RoadId& road, int lane) {
    return m_lanes.at(road).at(static_cast<std::size_t>(lane));
  }

  const RoadNetwork* m_net;
  std::map<RoadId, std::vector<std::vector<const Vehicle*>>> m_lanes;
  std::map<RoadId, std::vector<Obstacle>> m_obstacles;
};

namespace detail {

// Nearest obstacle on (road, lane) ahead of `from`: stop lines the vehicle has not
// cleared, plus the index's virtual obstacles.
inline Obstacle nearest_obstacle(const MicroIndex& idx, const Road& road, int lane, double from,
                                 double cleared_stop) {
  Obstacle best{kInf, 0.0};
  for (const auto& s : road.signs) {
    if (s.kind != SignKind::Stop || !s.applies_to(lane) || s.position < from) continue;
    if (s.position == cleared_stop) continue;
    best.position = s.position;
    break;
  }
  for (const auto& o : idx.obstacles(road.id))
    if (o.position >= from) {
      if (o.position < best.position) best = o;
      break;
    }
  return best;
}

inline void fill_adjacent(const MicroIndex& idx, const Road& road, const Vehicle& v, int lane,
                          LaneNeighbors& out, double horizon) {
  auto vs = idx.lane(road.id, lane);
  auto it = std::upper_bound(vs.begin(), vs.end(), v.position,
                             [](double pos, const Vehicle* o) { return pos < o->position; });
  if (it != vs.end()) {
    const double gap = (*it)->rear() - v.position;
    if (gap <= horizon) {
      out.leader_gap = gap;
      out.leader_speed = (*it)->speed;
    }
  }
  if (it != vs.begin()) {
    const Vehicle* f = *std::prev(it);
    const double gap = v.rear() - f->position;
    if (gap <= horizon) {
      out.follower_gap = gap;
      out.follower_speed = f->speed;
      out.follower_params = f->params;
    }
  }
  const auto obs = nearest_obstacle(idx, road, lane, v.position, v.cleared_stop);
  if (const double gap = obs.position - v.position; gap <= horizon && gap < out.leader_gap) {
    out.leader_gap = gap;
    out.leader_speed = obs.speed;
  }
}

}  // namespace detail

/// Perception of `v` from the current micro state held in `idx`.
inline Perception perceive(const MicroIndex& idx, const Vehicle& v, double horizon = kPerceptionHorizon) {
  const RoadNetwork& net = idx.network();
  const Road& road = net.road(v.road);
  Perception per;
  per.own_length = v.length;

  // Current lane, same road.
  auto vs = idx.lane(v.road, v.lane);
  auto self = std::lower_bound(vs.begin(), vs.end(), &v, MicroIndex::order);
  auto& cur = per.current;
  if (self != vs.begin()) {
    const Vehicle* f = *std::prev(self);
    const double gap = v.rear() - f->position;
    if (gap <= horizon) {
      cur.follower_gap = gap;
      cur.follower_speed = f->speed;
      cur.follower_params = f->params;
    }
  }
  auto ahead = (self != vs.end() && *self == &v) ? std::next(self) : self;
  double leader_gap = kInf;
  double leader_speed = 0.0;
  if (ahead != vs.end()) {
    leader_gap = (*ahead)->rear() - v.position;
    leader_speed = (*ahead)->speed;
  }
  if (auto obs = detail::nearest_obstacle(idx, road, v.lane, v.position, v.cleared_stop);
      obs.position - v.position < leader_gap) {
    leader_gap = obs.position - v.position;
    leader_speed = obs.speed;
  }

  // Continue across nodes along the vehicle's path.
  if (std::isinf(leader_gap)) {
    double offset = road.length - v.position;
    Vehicle probe = v;  // walks the path without touching the real vehicle
    int guard = 0;
    while (offset <= horizon && guard++ < 16) {
      auto next = next_road_for(net, probe);
      if (!next) break;
      const int lane = entry_lane(net, probe.road, probe.lane, *next);
      const Road& nr = net.road(*next);
      auto nvs = idx.lane(*next, lane);
      double gap = kInf;
      double spd = 0.0;
      if (!nvs.empty()) {
        gap = offset + nvs.front()->rear();
        spd = nvs.front()->speed;
      }
      if (auto obs = detail::nearest_obstacle(idx, nr, lane, 0.0, -kInf); offset + obs.position < gap) {
        gap = offset + obs.position;
        spd = obs.speed;
      }
      if (std::isfinite(gap)) {
        leader_gap = gap;
        leader_speed = spd;
        break;
      }
      if (probe.route_index + 1 < probe.route.roads.size() && probe.route.roads[probe.route_index] == probe.road)
        ++probe.route_index;
      probe.road = *next;
      probe.lane = lane;
      probe.position = 0.0;
      offset += nr.length;
    }
  }
  if (leader_gap <= horizon) {
    cur.leader_gap = leader_gap;
    cur.leader_speed = leader_speed;
  }

  for (Side side : {Side::Left, Side::Right}) {
    const int lane = v.lane + (side == Side::Left ? -1 : 1);
    if (lane < 0 || lane >= road.lane_count) continue;
    LaneNeighbors n;
    detail::fill_adjacent(idx, road, v, lane, n, horizon);
    per.adjacent[static_cast<int>(side)] = n;
  }

  per.speed_limit = speed_limit_at(road, v.lane, v.position);
  for (const auto& s : road.signs) {
    if (s.position <= v.position || s.kind != SignKind::SpeedLimit || !s.applies_to(v.lane)) continue;
    if (s.position - v.position > horizon) break;
    if (s.value < per.speed_limit) {
      per.next_limit = s.value;
      per.next_limit_distance = s.position - v.position;
    }
    break;
  }
  return per;
}

}  // namespace hytraffic
