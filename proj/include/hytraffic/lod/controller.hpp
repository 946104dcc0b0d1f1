/// @file controller.hpp
/// @brief Level-of-detail policy: jam detection, cluster split/merge and transition planning.
///
/// The controller never touches the simulation directly. It reads cluster state,
/// keeps its per-cell and per-cluster counters, and returns a plan of actions the
/// engine applies between steps.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "../hybrid/coupling.hpp"
#include "../hybrid/topology.hpp"
#include "../micro/behavior.hpp"

namespace hytraffic {

struct LodPolicy {
  bool enabled = true;
  double theta_down = 0.5;
  double theta_up = 0.8;
  int persistence = 10;  ///< K, in steps
  double min_cluster_length = 200.0;
  long micro_vehicle_budget = std::numeric_limits<long>::max();
  long cooldown = 50;
  /// Wall-clock time per step above which the budget is considered exceeded [s];
  /// 0 disables the trigger.
  double wall_clock_budget = 0.0;

  std::string invalid_field() const {
    if (!(theta_down > 0.0 && theta_down < theta_up)) return "theta_down";
    if (!(theta_up <= 1.0)) return "theta_up";
    if (persistence < 1) return "persistence";
    if (!(min_cluster_length >= 0.0)) return "min_cluster_length";
    if (micro_vehicle_budget < 0) return "micro_vehicle_budget";
    if (cooldown < 0) return "cooldown";
    if (!(wall_clock_budget >= 0.0)) return "wall_clock_budget";
    return {};
  }
  bool operator==(const LodPolicy&) const = default;
};

enum class ActionKind { Split, Refine, Coarsen, Merge };
enum class Trigger { Jam, Budget, Recovery };

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::Split: return "split";
    case ActionKind::Refine: return "refine";
    case ActionKind::Coarsen: return "coarsen";
    case ActionKind::Merge: return "merge";
  }
  return "?";
}

inline const char* to_string(Trigger t) {
  switch (t) {
    case Trigger::Jam: return "jam";
    case Trigger::Budget: return "budget";
    case Trigger::Recovery: return "recovery";
  }
  return "?";
}

/// One planned transition.
///  - Split: `cluster` keeps [0, offset) of its extent, `other` (a fresh id) takes the rest.
///  - Merge: `cluster` absorbs its downstream neighbor `other`.
///  - Refine / Coarsen: switch `cluster` to Micro / Macro.
struct Action {
  ActionKind kind = ActionKind::Refine;
  Trigger trigger = Trigger::Jam;
  ClusterId cluster = 0;
  ClusterId other = -1;
  double offset = 0.0;

  bool operator==(const Action&) const = default;
};

// ---------------------------------------------------------------------------
// Detection.

/// Updates the per-cell persistence counters of a macro cluster and returns which
/// cells are flagged as jammed.
inline std::vector<bool> detect_jam(Cluster& cluster, const LodPolicy& policy) {
  if (!cluster.is_macro()) throw RepresentationMismatch("detect_jam needs a macro cluster");
  std::vector<bool> flags;
  flags.reserve(cluster.macro.cells.size());
  for (auto& c : cluster.macro.cells) {
    const double r = speed_ratio(c, cluster.macro.fd);
    c.jam_steps = r < policy.theta_down ? c.jam_steps + 1 : 0;
    c.free_steps = r > policy.theta_up ? c.free_steps + 1 : 0;
    flags.push_back(c.jam_steps >= policy.persistence);
  }
  return flags;
}

/// Flags from the current counters, without updating them.
inline std::vector<bool> jam_flags(const Cluster& cluster, const LodPolicy& policy) {
  std::vector<bool> flags;
  if (!cluster.is_macro()) return flags;
  for (const auto& c : cluster.macro.cells) flags.push_back(c.jam_steps >= policy.persistence);
  return flags;
}

/// Free speed a driver of `v` aims for at its position, anticipating a lower limit ahead.
inline double local_free_speed(const RoadNetwork& net, const Vehicle& v) {
  const Road& road = net.road(v.road);
  Perception per;
  per.speed_limit = speed_limit_at(road, v.lane, v.position);
  for (const auto& s : road.signs) {
    if (s.position <= v.position || s.kind != SignKind::SpeedLimit || !s.applies_to(v.lane)) continue;
    if (s.value < per.speed_limit) {
      per.next_limit = s.value;
      per.next_limit_distance = s.position - v.position;
    }
    break;
  }
  return anticipated_free_speed(v.params.v0, per, v.params.b);
}

/// Speed ratio of a cluster: lowest cell ratio when Macro, mean vehicle ratio when
/// Micro (1 when empty).
inline double cluster_ratio(const Cluster& c, const RoadNetwork& net) {
  if (c.is_macro()) {
    double r = 1.0;
    for (const auto& cell : c.macro.cells) r = std::min(r, speed_ratio(cell, c.macro.fd));
    return r;
  }
  if (c.vehicles.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& v : c.vehicles) sum += std::min(1.0, v.speed / std::max(local_free_speed(net, v), 1e-9));
  return sum / static_cast<double>(c.vehicles.size());
}

/// Per-step bookkeeping of one cluster: cell counters (Macro), free-flow persistence
/// and the last step with jam activity.
inline void update_activity(Cluster& c, const RoadNetwork& net, const LodPolicy& policy, long step) {
  bool jam = false;
  if (c.is_macro()) {
    for (bool f : detect_jam(c, policy)) jam = jam || f;
  }
  const double r = cluster_ratio(c, net);
  if (c.is_micro()) jam = r < policy.theta_down;
  c.jam_steps = r < policy.theta_down ? c.jam_steps + 1 : 0;
  c.free_steps = r > policy.theta_up ? c.free_steps + 1 : 0;
  if (jam) c.last_jam = step;
}

inline bool on_cooldown(const Cluster& c, const LodPolicy& policy, long step) {
  return step - c.last_switch < policy.cooldown;
}

// ---------------------------------------------------------------------------
// Split and merge.

namespace detail {

inline Cluster child_of(const Cluster& parent, ClusterId id) {
  Cluster c;
  c.id = id;
  c.representation = parent.representation;
  c.root = parent.root;
  c.refined = parent.refined;
  c.last_switch = parent.last_switch;
  c.last_jam = parent.last_jam;
  c.jam_steps = parent.jam_steps;
  c.free_steps = parent.free_steps;
  c.macro.fd = parent.macro.fd;
  return c;
}

}  // namespace detail

/// Cuts `c` at `offset` from its start. The upstream part keeps the id and the
/// residual; the downstream part gets `new_id`.
inline std::pair<Cluster, Cluster> split_cluster(const Cluster& c, double offset, const LodPolicy& policy,
                                                 ClusterId new_id) {
  const double len = c.length();
  if (offset < policy.min_cluster_length - 1e-9 || len - offset < policy.min_cluster_length - 1e-9 ||
      offset <= 0.0 || offset >= len)
    throw TooSmall("split of cluster " + std::to_string(c.id) + " at " + std::to_string(offset) +
                   " leaves a part shorter than " + std::to_string(policy.min_cluster_length) + " m");

  Cluster up = detail::child_of(c, c.id);
  Cluster down = detail::child_of(c, new_id);
  up.residual = c.residual;

  double off = 0.0;
  for (const auto& p : c.extent) {
    const double a = off;
    const double b = off + p.length();
    if (b <= offset + kPointTolerance) {
      up.extent.push_back(p);
    } else if (a >= offset - kPointTolerance) {
      down.extent.push_back(p);
    } else {
      const double cut = p.start + (offset - a);
      up.extent.push_back({p.road, p.start, cut});
      down.extent.push_back({p.road, cut, p.end});
    }
    off = b;
  }

  if (c.is_micro()) {
    for (const auto& v : c.vehicles) {
      auto o = c.offset_of(v.road, v.position);
      (o && *o < offset ? up : down).vehicles.push_back(v);
    }
  } else {
    double cell_off = 0.0;
    bool aligned = false;
    for (const auto& cell : c.macro.cells) {
      if (std::abs(cell_off - offset) <= 1e-6) aligned = true;
      (cell_off < offset - 1e-6 ? up : down).macro.cells.push_back(cell);
      cell_off += cell.dx;
    }
    if (!aligned)
      throw TooSmall("split of macro cluster " + std::to_string(c.id) + " at " + std::to_string(offset) +
                     " is not on a cell edge");
  }
  return {std::move(up), std::move(down)};
}

/// Joins `a` and its downstream neighbor `b`. The state held by their shared interface
/// moves into the merged cluster: pending vehicles are inserted when they fit, all
/// other interface mass joins the residual.
inline Cluster merge_clusters(const Cluster& a, const Cluster& b, const RoadNetwork& net,
                              BoundaryInterface* shared = nullptr) {
  if (!adjacent(net, a, b))
    throw NotAdjacent("clusters " + std::to_string(a.id) + " and " + std::to_string(b.id) + " are not adjacent");
  if (a.representation != b.representation)
    throw RepresentationMismatch("clusters " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                                 " have different representations");
  Cluster m = detail::child_of(a, a.id);
  m.extent = join_extents(a.extent, b.extent);
  m.residual = a.residual + b.residual;
  m.refined = a.refined || b.refined;
  m.last_switch = std::max(a.last_switch, b.last_switch);
  m.last_jam = std::max(a.last_jam, b.last_jam);
  m.jam_steps = std::max(a.jam_steps, b.jam_steps);
  m.free_steps = std::min(a.free_steps, b.free_steps);
  if (a.is_micro()) {
    m.vehicles = a.vehicles;
    m.vehicles.insert(m.vehicles.end(), b.vehicles.begin(), b.vehicles.end());
  } else {
    m.macro.cells = a.macro.cells;
    m.macro.cells.insert(m.macro.cells.end(), b.macro.cells.begin(), b.macro.cells.end());
  }
  if (shared) {
    if (m.is_micro()) {
      for (auto& v : shared->pending) {
        bool fits = true;
        for (const auto& o : m.vehicles) {
          if (o.road != v.road || o.lane != v.lane) continue;
          if (o.position >= v.position && o.rear() - v.position < insertion_gap(v)) fits = false;
          if (o.position < v.position && v.rear() - o.position < v.params.s0) fits = false;
        }
        if (fits)
          m.vehicles.push_back(std::move(v));
        else
          m.residual += 1.0;
      }
    } else {
      m.residual += static_cast<double>(shared->pending.size());
    }
    m.residual += shared->backlog;
    for (double c : shared->carryover) m.residual += c;
    shared->pending.clear();
    shared->backlog = 0.0;
    std::fill(shared->carryover.begin(), shared->carryover.end(), 0.0);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Planning.

/// Read access to the parts of the simulation the planner needs.
struct PlanContext {
  const RoadNetwork* network = nullptr;
  /// True when the interface between `up` and `down` holds no mass.
  std::function<bool(ClusterId up, ClusterId down)> boundary_empty = [](ClusterId, ClusterId) { return true; };
  /// Set by the optional wall-clock trigger.
  bool over_wall_clock = false;
};

namespace detail {

// Cell edges (offsets from the cluster start) of a macro cluster: edges[i] is the
// start of cell i, edges[n] the cluster length.
inline std::vector<double> cell_edges(const Cluster& c) {
  std::vector<double> e{0.0};
  for (const auto& cell : c.macro.cells) e.push_back(e.back() + cell.dx);
  return e;
}

}  // namespace detail

/// Deterministic plan for the current state:
///  1. jammed Macro clusters off cooldown are cut around the flagged cells (padded by
///     one cell, grown to the minimum cluster length) and the jammed part is refined,
///     then joined with a neighboring refined cluster of the same origin;
///  2. while the micro vehicle count exceeds the budget, Micro clusters are coarsened,
///     least recently jammed first, skipping clusters on cooldown;
///  3. refined clusters that flowed freely for K steps are coarsened back;
///  4. adjacent free-flowing clusters with the same representation and origin are merged.
inline std::vector<Action> plan_transitions(const std::vector<Cluster>& clusters, const LodPolicy& policy,
                                            long step, ClusterId next_id, const PlanContext& ctx) {
  std::vector<Action> plan;
  if (!policy.enabled) return plan;
  const RoadNetwork& net = *ctx.network;
  std::set<ClusterId> touched;
  const long K = policy.persistence;

  auto upstream_of = [&](const Cluster& c) -> const Cluster* {
    for (const auto& o : clusters)
      if (o.id != c.id && adjacent(net, o, c)) return &o;
    return nullptr;
  };
  auto downstream_of = [&](const Cluster& c) -> const Cluster* {
    for (const auto& o : clusters)
      if (o.id != c.id && adjacent(net, c, o)) return &o;
    return nullptr;
  };

  // 1. Jams.
  double refined_mass = 0.0;
  for (const auto& c : clusters) {
    if (!c.is_macro() || on_cooldown(c, policy, step)) continue;
    const auto flags = jam_flags(c, policy);
    const auto first = std::find(flags.begin(), flags.end(), true);
    if (first == flags.end()) continue;
    const auto n = static_cast<long>(flags.size());
    long i0 = first - flags.begin();
    long i1 = n - 1 - (std::find(flags.rbegin(), flags.rend(), true) - flags.rbegin());
    i0 = std::max(0L, i0 - 1);
    i1 = std::min(n - 1, i1 + 1);
    const auto edges = detail::cell_edges(c);
    const double len = edges.back();
    // Grow to the minimum length, downstream first.
    bool grow_down = true;
    while (edges[static_cast<std::size_t>(i1 + 1)] - edges[static_cast<std::size_t>(i0)] <
               policy.min_cluster_length - 1e-9 &&
           (i0 > 0 || i1 < n - 1)) {
      if ((grow_down && i1 < n - 1) || i0 == 0)
        ++i1;
      else
        --i0;
      grow_down = !grow_down;
    }
    double o0 = edges[static_cast<std::size_t>(i0)];
    double o1 = edges[static_cast<std::size_t>(i1 + 1)];
    if (o0 < policy.min_cluster_length - 1e-9) o0 = 0.0;
    if (len - o1 < policy.min_cluster_length - 1e-9) o1 = len;

    ClusterId region = c.id;
    if (o0 > 0.0) {
      region = next_id++;
      plan.push_back({ActionKind::Split, Trigger::Jam, c.id, region, o0});
    }
    if (o1 < len) {
      plan.push_back({ActionKind::Split, Trigger::Jam, region, next_id++, o1 - o0});
    }
    plan.push_back({ActionKind::Refine, Trigger::Jam, region, -1, 0.0});
    touched.insert(c.id);
    for (std::size_t i = static_cast<std::size_t>(i0); i <= static_cast<std::size_t>(i1); ++i)
      refined_mass += c.macro.cells[i].mass();

    // Join refined neighbors of the same origin.
    ClusterId head = region;
    if (o0 == 0.0)
      if (const Cluster* up = upstream_of(c);
          up && up->is_micro() && up->refined && up->root == c.root && !touched.count(up->id)) {
        plan.push_back({ActionKind::Merge, Trigger::Jam, up->id, region, 0.0});
        touched.insert(up->id);
        head = up->id;
      }
    if (o1 == len)
      if (const Cluster* down = downstream_of(c);
          down && down->is_micro() && down->refined && down->root == c.root && !touched.count(down->id)) {
        plan.push_back({ActionKind::Merge, Trigger::Jam, head, down->id, 0.0});
        touched.insert(down->id);
      }
  }

  // 2. Budget.
  long micro_count = static_cast<long>(std::llround(refined_mass));
  for (const auto& c : clusters)
    if (c.is_micro()) micro_count += static_cast<long>(c.vehicles.size());
  if (micro_count > policy.micro_vehicle_budget || ctx.over_wall_clock) {
    std::vector<const Cluster*> candidates;
    for (const auto& c : clusters)
      if (c.is_micro() && !touched.count(c.id) && !on_cooldown(c, policy, step) && can_be_macro(net, c))
        candidates.push_back(&c);
    std::sort(candidates.begin(), candidates.end(), [](const Cluster* a, const Cluster* b) {
      return a->last_jam != b->last_jam ? a->last_jam < b->last_jam : a->id < b->id;
    });
    for (const Cluster* c : candidates) {
      if (micro_count <= policy.micro_vehicle_budget && !ctx.over_wall_clock) break;
      plan.push_back({ActionKind::Coarsen, Trigger::Budget, c->id, -1, 0.0});
      touched.insert(c->id);
      micro_count -= static_cast<long>(c->vehicles.size());
      if (ctx.over_wall_clock) break;  // one coarsening per step under wall-clock pressure
    }
  }

  // 3. Recovery.
  for (const auto& c : clusters) {
    if (!c.is_micro() || !c.refined || touched.count(c.id)) continue;
    if (c.free_steps < K || on_cooldown(c, policy, step) || !can_be_macro(net, c)) continue;
    plan.push_back({ActionKind::Coarsen, Trigger::Recovery, c.id, -1, 0.0});
    touched.insert(c.id);
  }

  // 4. Merges of settled neighbors.
  for (const auto& a : clusters) {
    if (touched.count(a.id) || a.free_steps < K) continue;
    const Cluster* b = downstream_of(a);
    if (!b || b->id == a.id || touched.count(b->id) || b->free_steps < K) continue;
    if (a.representation != b->representation || a.root != b->root) continue;
    if (!ctx.boundary_empty(a.id, b->id)) continue;
    plan.push_back({ActionKind::Merge, Trigger::Recovery, a.id, b->id, 0.0});
    touched.insert(a.id);
    touched.insert(b->id);
  }
  return plan;
}

}  // namespace hytraffic
