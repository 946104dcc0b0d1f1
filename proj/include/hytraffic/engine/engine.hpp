/// @file engine.hpp
/// @brief Influence-reaction engine running the micro, macro and control levels on one clock.
///
/// Each step runs the same phase sequence:
///   perception -> memorization -> decision -> natural -> reaction -> system -> advance.
/// Agents only emit influences during the first phases; state changes happen in the
/// reaction of their level (vehicle kinematics, cell transmission) and in the engine's
/// reaction to system influences (insertions, removals, level-of-detail actions).
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "../error.hpp"
#include "../hybrid/coupling.hpp"
#include "../hybrid/topology.hpp"
#include "../lod/controller.hpp"
#include "../micro/behavior.hpp"
#include "../micro/perception.hpp"
#include "model.hpp"
#include "probe.hpp"

namespace hytraffic {

enum class Phase { Idle, Perception, Memorization, Decision, Natural, Reaction, System, Advance };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Idle: return "idle";
    case Phase::Perception: return "perception";
    case Phase::Memorization: return "memorization";
    case Phase::Decision: return "decision";
    case Phase::Natural: return "natural";
    case Phase::Reaction: return "reaction";
    case Phase::System: return "system";
    case Phase::Advance: return "advance";
  }
  return "?";
}

/// Cumulative counters since the start of the run.
struct Ledger {
  double generated = 0.0;  ///< mass emitted by sources (fractional for flow-mass sources)
  long inserted = 0;       ///< vehicles created at input points, placed or queued
  double absorbed = 0.0;   ///< mass removed at sinks
  long released = 0;       ///< vehicles created at macro-to-micro boundaries

  bool operator==(const Ledger&) const = default;
};

/// Flow through one cluster during the last step [veh/s].
struct ClusterFlow {
  double inflow = 0.0;
  double outflow = 0.0;
};

struct TransitionRecord {
  long step = 0;
  ActionKind kind = ActionKind::Refine;
  Trigger trigger = Trigger::Jam;
  ClusterId cluster = 0;
  ClusterId other = -1;
  std::string boundary;  ///< split or merge point, or empty
  std::string extent;    ///< extent of the resulting cluster (of `other` for splits)
  double pre_mass = 0.0;
  double post_mass = 0.0;
};

struct EngineConfig {
  std::uint64_t seed = 0;
  long steps = -1;       ///< negative: derived from the scenario duration
  unsigned threads = 1;  ///< workers for the per-agent phases
  bool check_overlaps = true;
};

struct Insertion {
  std::size_t generator = 0;
  VehicleSpec spec;
};

/// System influences collected during one step.
struct SystemInfluences {
  std::vector<VehicleId> removals;
  std::vector<Action> lod;
  std::vector<Insertion> insertions;

  bool empty() const { return removals.empty() && lod.empty() && insertions.empty(); }
};

struct RunReport {
  long steps = 0;
  Ledger ledger;
  std::size_t transitions = 0;
  std::vector<ProbeFailure> probe_failures;
  std::optional<std::string> error;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index is independent.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  if (threads <= 1 || n < 2 * static_cast<std::size_t>(threads)) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

class Engine {
public:
  Engine(ScenarioModel model, EngineConfig config = {})
      : m_model(std::move(model)), m_cfg(config), m_rng(stream_seed(config.seed, "engine")) {}

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // ---- configuration -----------------------------------------------------

  /// Probes are notified in registration order; the engine does not own them.
  void add_probe(Probe& p) { m_probes.push_back(&p); }

  /// Called at every phase change; used to audit the phase sequence.
  std::function<void(Phase)> phase_hook;

  // ---- observation -------------------------------------------------------

  const ScenarioModel& model() const { return m_model; }
  const RoadNetwork& network() const { return m_model.network; }
  const EngineConfig& config() const { return m_cfg; }
  double dt() const { return m_model.time_step; }
  long step() const { return m_step; }
  double time() const { return static_cast<double>(m_step) * m_model.time_step; }
  Phase phase() const { return m_phase; }
  bool initialized() const { return m_initialized; }
  const std::vector<Cluster>& clusters() const { return m_clusters; }
  const std::map<NetPoint, BoundaryInterface>& interfaces() const { return m_ifaces; }
  const std::vector<Generator>& generators() const { return m_generators; }
  const Ledger& ledger() const { return m_ledger; }
  const std::vector<TransitionRecord>& transitions() const { return m_transitions; }
  const std::vector<ProbeFailure>& probe_failures() const { return m_probe_failures; }
  double initial_mass() const { return m_initial_mass; }
  double last_step_wall_time() const { return m_last_wall; }

  ClusterFlow flow(ClusterId id) const {
    auto it = m_flows.find(id);
    return it == m_flows.end() ? ClusterFlow{} : it->second;
  }

  const Cluster& cluster(ClusterId id) const { return m_clusters.at(index_of(id)); }

  /// Cluster containing (road, position), or nullptr.
  const Cluster* cluster_at(const RoadId& road, double pos) const {
    auto it = m_lookup.find(road);
    if (it == m_lookup.end()) return nullptr;
    const double len = m_model.network.road(road).length;
    for (const auto& [s, e, id] : it->second) {
      const bool inside = pos >= s - kPointTolerance && (pos < e || (e >= len - kPointTolerance && pos <= e + kPointTolerance));
      if (inside) return &m_clusters[index_of(id)];
    }
    return nullptr;
  }

  long micro_vehicle_count() const {
    long n = 0;
    for (const auto& c : m_clusters)
      if (c.is_micro()) n += static_cast<long>(c.vehicles.size());
    return n;
  }

  /// Vehicles waiting at generators and boundaries.
  long queued() const {
    long n = 0;
    for (const auto& g : m_generators) n += static_cast<long>(g.queue.size());
    for (const auto& [_, i] : m_ifaces) n += static_cast<long>(i.pending.size());
    return n;
  }

  /// Every vehicle in the system, whole or fractional: micro vehicles, cell masses,
  /// cluster residuals, interface carryover/queues/backlog and generator accumulators,
  /// queues and backlog.
  double total_mass() const {
    double m = 0.0;
    for (const auto& c : m_clusters) m += c.mass();
    for (const auto& [_, i] : m_ifaces) m += i.mass();
    for (const auto& g : m_generators)
      m += g.accumulated_mass() + static_cast<double>(g.queue.size()) + g.macro_backlog;
    return m;
  }

  /// Mass the ledger says the system should hold.
  double expected_mass() const { return m_initial_mass + m_ledger.generated - m_ledger.absorbed; }

  /// Structural problems in the current state; empty when consistent.
  std::vector<std::string> consistency_problems() const {
    std::vector<std::string> out;
    std::vector<ClusterSpec> specs;
    for (const auto& c : m_clusters) specs.push_back({c.id, c.representation, c.extent, 0.0});
    for (auto& p : partition_problems(m_model.network, specs))
      if (p.find("needs a single entry") == std::string::npos) out.push_back(p);
    for (const auto& c : m_clusters) {
      if (c.is_micro() && !c.macro.cells.empty()) out.push_back("micro cluster " + std::to_string(c.id) + " has cells");
      if (c.is_macro() && !c.vehicles.empty()) out.push_back("macro cluster " + std::to_string(c.id) + " has vehicles");
      for (const auto& v : c.vehicles) {
        const Cluster* at = cluster_at(v.road, v.position);
        if (!at || at->id != c.id) out.push_back("vehicle " + std::to_string(v.id) + " outside its cluster");
        if (v.speed < 0.0) out.push_back("vehicle " + std::to_string(v.id) + " has a negative speed");
      }
    }
    for (const auto& [key, i] : m_ifaces) {
      const Cluster& d = cluster(i.downstream);
      for (double c : i.carryover)
        if (c < -1e-12 || c >= 1.0) out.push_back("carryover out of [0,1) at " + key.first);
      if (d.is_macro() && !i.pending.empty()) out.push_back("pending vehicles in front of a macro cluster");
    }
    const double expected = expected_mass();
    if (std::abs(total_mass() - expected) > 1e-9 * std::max(1.0, std::abs(expected)))
      out.push_back("mass ledger mismatch");
    return out;
  }

  /// Order-sensitive hash of the full simulation state.
  std::uint64_t state_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto bytes = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    auto num = [&](double x) { bytes(&x, sizeof x); };
    auto str = [&](const std::string& s) { bytes(s.data(), s.size()); };
    num(static_cast<double>(m_step));
    for (const auto& c : m_clusters) {
      num(c.id);
      num(c.is_micro() ? 0 : 1);
      num(c.residual);
      for (const auto& p : c.extent) {
        str(p.road);
        num(p.start);
        num(p.end);
      }
      for (const auto& v : c.vehicles) {
        num(static_cast<double>(v.id));
        str(v.road);
        num(v.lane);
        num(v.position);
        num(v.speed);
      }
      for (const auto& cell : c.macro.cells) num(cell.rho);
    }
    for (const auto& [_, i] : m_ifaces) {
      num(i.backlog);
      for (double c : i.carryover) num(c);
      num(static_cast<double>(i.pending.size()));
    }
    for (const auto& g : m_generators) {
      num(g.accumulated_mass());
      num(static_cast<double>(g.queue.size()));
      num(g.macro_backlog);
    }
    num(m_ledger.generated);
    num(m_ledger.absorbed);
    return h;
  }

  // ---- lifecycle ---------------------------------------------------------

  /// Builds the initial state. Throws on an invalid layout or a time step violating
  /// the CFL condition of any macroscopic cell.
  void initialize() {
    const double dt = m_model.time_step;
    if (!(dt > 0.0)) throw Error("time step must be positive");
    if (auto f = m_model.macro.fd.invalid_field(); !f.empty()) throw Error("invalid fundamental diagram: " + f);
    if (auto f = m_model.lod.invalid_field(); !f.empty()) throw Error("invalid level-of-detail policy: " + f);
    const auto specs = effective_clusters(m_model);
    if (auto problems = partition_problems(m_model.network, specs); !problems.empty())
      throw Error("invalid cluster layout: " + problems.front());

    m_generators.clear();
    m_routes.clear();
    for (const auto& g : m_model.generators) {
      m_generators.emplace_back(g, m_cfg.seed);
      if (g.point.destination)
        m_routes.push_back(compute_route(m_model.network, g.point.road, *g.point.destination, m_model.free_speed));
      else
        m_routes.push_back(Route{{g.point.road}, std::nullopt});
    }

    m_clusters.clear();
    ClusterId max_id = 0;
    for (const auto& s : specs) {
      Cluster c;
      c.id = s.id;
      c.root = s.id;
      c.extent = s.extent;
      c.representation = Representation::Macro;
      c.macro = MacroSegment{build_cells(s.extent, m_model.network, m_model.macro.dx), m_model.macro.fd};
      if (s.initial_density > m_model.macro.fd.rho_jam)
        throw Error("initial density of cluster " + std::to_string(s.id) + " exceeds the jam density");
      for (auto& cell : c.macro.cells) cell.rho = s.initial_density;
      if (s.representation == Representation::Micro) {
        if (s.initial_density > 0.0)
          disaggregate_cluster(c, m_model.network, factory(), leading_rear_for(c));
        else {
          c.macro = MacroSegment{};
          c.representation = Representation::Micro;
        }
      }
      max_id = std::max(max_id, s.id);
      m_clusters.push_back(std::move(c));
    }
    std::sort(m_clusters.begin(), m_clusters.end(), [](const Cluster& a, const Cluster& b) { return a.id < b.id; });
    m_next_cluster = max_id + 1;

    for (const auto& c : m_clusters) {
      if (c.is_macro()) check_cfl(c.macro, dt);
      else if (m_model.lod.enabled)
        check_cfl(MacroSegment{build_cells(c.extent, m_model.network, m_model.macro.dx), m_model.macro.fd}, dt);
    }
    rebuild_topology();
    m_step = 0;
    m_ledger = {};
    m_transitions.clear();
    m_initial_mass = total_mass();
    m_initialized = true;
  }

  /// Executes one time stamp.
  void advance_step() {
    if (!m_initialized) throw Error("engine not initialized");
    const auto wall_start = std::chrono::steady_clock::now();
    const double dt = m_model.time_step;
    const double t = time();
    const long label = m_step + 1;
    m_flows.clear();
    for (const auto& c : m_clusters) m_flows[c.id] = {};

    // (1) Perception.
    set_phase(Phase::Perception);
    std::vector<Vehicle*> agents;
    for (auto& c : m_clusters)
      if (c.is_micro())
        for (auto& v : c.vehicles) agents.push_back(&v);
    MicroIndex index(m_model.network);
    for (const Vehicle* v : agents) index.add(*v);
    for (const auto& [key, i] : m_ifaces) {
      const Cluster& d = cluster(i.downstream);
      if (!d.is_macro()) continue;
      const auto& cell = d.macro.cells.front();
      if (boundary_blocked(i, cell, d.macro.fd))
        index.add_obstacle(key.first, key.second);
      else if (auto lead = virtual_leader(cell, d.macro.fd))
        index.add_obstacle(key.first, key.second + lead->offset, lead->speed);
    }
    index.finalize();
    std::vector<Perception> perceptions(agents.size());
    parallel_for(agents.size(), m_cfg.threads, [&](std::size_t k) { perceptions[k] = perceive(index, *agents[k]); });

    // (2) Memorization.
    set_phase(Phase::Memorization);
    for (std::size_t k = 0; k < agents.size(); ++k) memorize(*agents[k], perceptions[k]);

    // (3) Decision.
    set_phase(Phase::Decision);
    std::vector<MicroInfluence> influences(agents.size());
    parallel_for(agents.size(), m_cfg.threads, [&](std::size_t k) {
      const Vehicle& v = *agents[k];
      NavigationContext nav;
      if (auto next = planned_next_road(v)) {
        nav.permitted = lanes_to_destination(m_model.network, v.road, *next);
        nav.distance_to_node = m_model.network.road(v.road).length - v.position;
      }
      influences[k] = behavior_chain(v, perceptions[k], nav);
    });

    // (4) Natural: sources emit, macro boundaries settle their fluxes.
    set_phase(Phase::Natural);
    SystemInfluences sys;
    for (std::size_t g = 0; g < m_generators.size(); ++g)
      for (auto& spec : m_generators[g].generation_influences(t, dt, m_ledger.generated))
        sys.insertions.push_back({g, spec});
    const auto outflows = macro_outflows();

    // (5) Reaction of each level.
    set_phase(Phase::Reaction);
    react_micro(agents, influences, sys);
    react_macro(outflows);

    // (6) Reaction to system influences.
    set_phase(Phase::System);
    m_label = label;
    for (auto& c : m_clusters) update_activity(c, m_model.network, m_model.lod, label);
    if (m_model.lod.enabled) {
      PlanContext ctx;
      ctx.network = &m_model.network;
      ctx.boundary_empty = [this](ClusterId up, ClusterId down) {
        for (const auto& [_, i] : m_ifaces)
          if (i.upstream == up && i.downstream == down) return i.mass() < 1e-12;
        return true;
      };
      ctx.over_wall_clock = m_model.lod.wall_clock_budget > 0.0 && m_last_wall > m_model.lod.wall_clock_budget;
      sys.lod = plan_transitions(m_clusters, m_model.lod, label, m_next_cluster, ctx);
    }
    apply_system_influences(sys);

    // (7) Advance.
    set_phase(Phase::Advance);
    ++m_step;
    m_label = m_step;
    set_phase(Phase::Idle);
    m_last_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  }

  /// Applies system influences: removals, then level-of-detail actions, then insertions.
  void apply_system_influences(SystemInfluences sys) {
    const double dt = m_model.time_step;
    std::sort(sys.removals.begin(), sys.removals.end());
    for (VehicleId id : sys.removals) {
      bool found = false;
      for (auto& c : m_clusters) {
        auto it = std::find_if(c.vehicles.begin(), c.vehicles.end(), [id](const Vehicle& v) { return v.id == id; });
        if (it == c.vehicles.end()) continue;
        c.vehicles.erase(it);
        m_ledger.absorbed += 1.0;
        m_flows[c.id].outflow += 1.0 / dt;
        found = true;
        break;
      }
      if (!found) throw UnknownTarget("no vehicle with id " + std::to_string(id));
    }

    for (const auto& a : sys.lod) apply_action(a);

    std::stable_sort(sys.insertions.begin(), sys.insertions.end(),
                     [](const Insertion& a, const Insertion& b) { return a.generator < b.generator; });
    for (const auto& ins : sys.insertions) {
      if (ins.generator >= m_generators.size()) throw UnknownTarget("no generator " + std::to_string(ins.generator));
      auto& g = m_generators[ins.generator];
      const auto& point = g.spec().point;
      const Cluster* at = cluster_at(point.road, 0.0);
      if (!at) throw UnknownTarget("input point '" + point.id + "' outside every cluster");
      ++m_ledger.inserted;
      if (at->is_macro()) {
        g.macro_backlog += 1.0;
        continue;
      }
      g.queue.push_back(make_generated(ins.generator, ins.spec));
    }

    LaneOccupancy occ(*this);
    for (std::size_t gi = 0; gi < m_generators.size(); ++gi) {
      auto& g = m_generators[gi];
      const auto& point = g.spec().point;
      const Cluster* at = cluster_at(point.road, 0.0);
      if (!at || at->is_macro() || g.queue.empty()) continue;
      const ClusterId target = at->id;
      std::set<int> blocked;
      std::deque<Vehicle> keep;
      for (auto& v : g.queue) {
        if (!blocked.count(v.lane) && occ.can_insert(v)) {
          occ.add(v);
          m_flows[target].inflow += 1.0 / dt;
          m_clusters[index_of(target)].vehicles.push_back(std::move(v));
        } else {
          blocked.insert(v.lane);
          keep.push_back(std::move(v));
        }
      }
      g.queue = std::move(keep);
    }
    for (auto& [_, iface] : m_ifaces) {
      if (iface.pending.empty()) continue;
      const ClusterId target = iface.downstream;
      auto released = release_pending(iface, [&](const Vehicle& v) {
        if (!occ.can_insert(v)) return false;
        occ.add(v);
        return true;
      });
      for (auto& v : released) {
        m_flows[target].inflow += 1.0 / dt;
        m_clusters[index_of(target)].vehicles.push_back(std::move(v));
      }
    }
  }

  /// Applies one level-of-detail action and logs it.
  void apply_action(const Action& a) {
    TransitionRecord rec;
    rec.step = m_label;
    rec.kind = a.kind;
    rec.trigger = a.trigger;
    rec.cluster = a.cluster;
    rec.other = a.other;
    const auto& net = m_model.network;
    const double dt = m_model.time_step;
    switch (a.kind) {
      case ActionKind::Split: {
        if (contains_id(a.other)) throw Error("cluster id " + std::to_string(a.other) + " already in use");
        Cluster& c = mutable_cluster(a.cluster);
        rec.pre_mass = c.mass();
        auto [up, down] = split_cluster(c, a.offset, m_model.lod, a.other);
        rec.boundary = point_string(down.first().road, down.first().start);
        rec.extent = down.extent_string();
        rec.post_mass = up.mass() + down.mass();
        c = std::move(up);
        m_clusters.push_back(std::move(down));
        m_next_cluster = std::max(m_next_cluster, a.other + 1);
        break;
      }
      case ActionKind::Merge: {
        const Cluster& b = cluster(a.other);
        BoundaryInterface* shared = nullptr;
        NetPoint key{b.first().road, b.first().start};
        if (auto it = m_ifaces.find(key); it != m_ifaces.end() && it->second.upstream == a.cluster) shared = &it->second;
        rec.pre_mass = cluster(a.cluster).mass() + b.mass() + (shared ? shared->mass() : 0.0);
        rec.boundary = point_string(key.first, key.second);
        Cluster merged = merge_clusters(cluster(a.cluster), b, net, shared);
        if (shared) m_ifaces.erase(key);
        rec.post_mass = merged.mass();
        rec.extent = merged.extent_string();
        m_clusters.erase(m_clusters.begin() + static_cast<long>(index_of(a.other)));
        mutable_cluster(a.cluster) = std::move(merged);
        break;
      }
      case ActionKind::Refine: {
        Cluster& c = mutable_cluster(a.cluster);
        if (!c.is_macro()) throw RepresentationMismatch("cluster " + std::to_string(c.id) + " is already micro");
        rec.pre_mass = c.mass();
        refine(c);
        rec.post_mass = c.mass();
        rec.extent = c.extent_string();
        break;
      }
      case ActionKind::Coarsen: {
        Cluster& c = mutable_cluster(a.cluster);
        if (!c.is_micro()) throw RepresentationMismatch("cluster " + std::to_string(c.id) + " is already macro");
        if (!can_be_macro(net, c))
          throw RepresentationMismatch("cluster " + std::to_string(c.id) + " cannot be macroscopic");
        rec.pre_mass = c.mass();
        coarsen(c);
        check_cfl(c.macro, dt);
        rec.post_mass = c.mass();
        rec.extent = c.extent_string();
        break;
      }
    }
    std::sort(m_clusters.begin(), m_clusters.end(), [](const Cluster& x, const Cluster& y) { return x.id < y.id; });
    rebuild_topology();
    m_transitions.push_back(std::move(rec));
  }

  /// Full run with probe notifications. On error every probe's on_error is called
  /// once and the error is rethrown.
  RunReport run() {
    notify(ProbeEvent::SimulationStart);
    try {
      initialize();
      notify(ProbeEvent::Initialized);
      const long n = m_cfg.steps >= 0 ? m_cfg.steps : m_model.steps();
      for (long i = 0; i < n; ++i) {
        advance_step();
        notify(ProbeEvent::StepEnd);
      }
    } catch (const std::exception& e) {
      m_error = e.what();
      notify_error(e);
      throw;
    }
    notify(ProbeEvent::Final);
    return report();
  }

  RunReport report() const {
    RunReport r;
    r.steps = m_step;
    r.ledger = m_ledger;
    r.transitions = m_transitions.size();
    r.probe_failures = m_probe_failures;
    r.error = m_error;
    return r;
  }

  /// Notifies every probe, in registration order. Probe exceptions are recorded.
  void notify(ProbeEvent e) {
    for (Probe* p : m_probes) {
      try {
        switch (e) {
          case ProbeEvent::SimulationStart: p->on_simulation_start(*this); break;
          case ProbeEvent::Initialized: p->on_initialized(*this); break;
          case ProbeEvent::StepEnd: p->on_step_end(*this); break;
          case ProbeEvent::Final: p->on_final(*this); break;
          case ProbeEvent::Error: break;
        }
      } catch (const std::exception& ex) {
        m_probe_failures.push_back({p->name(), e, m_step, ex.what()});
      } catch (...) {
        m_probe_failures.push_back({p->name(), e, m_step, "unknown exception"});
      }
    }
  }

private:
  // ---- helpers -----------------------------------------------------------

  // Vehicle occupancy per lane, kept current while the system phase inserts vehicles.
  class LaneOccupancy {
  public:
    explicit LaneOccupancy(const Engine& e) : m_net(&e.m_model.network) {
      for (const auto& c : e.m_clusters)
        for (const auto& v : c.vehicles) m_lanes[{v.road, v.lane}].push_back({v.position, v.rear()});
      for (auto& [_, l] : m_lanes) std::sort(l.begin(), l.end());
    }

    void add(const Vehicle& v) {
      auto& l = m_lanes[{v.road, v.lane}];
      l.insert(std::upper_bound(l.begin(), l.end(), std::pair{v.position, v.rear()}), {v.position, v.rear()});
    }

    /// Gap ahead of at least s0 + v T and gap behind of at least s0.
    bool can_insert(const Vehicle& v) const {
      const double need = insertion_gap(v);
      const Road& road = m_net->road(v.road);
      auto it = m_lanes.find({v.road, v.lane});
      bool leader_found = false;
      if (it != m_lanes.end()) {
        const auto& l = it->second;
        auto ahead = std::lower_bound(l.begin(), l.end(), std::pair{v.position, -kInf});
        if (ahead != l.end()) {
          leader_found = true;
          if (ahead->second - v.position < need) return false;
        }
        if (ahead != l.begin() && v.rear() - std::prev(ahead)->first < v.params.s0) return false;
      }
      const double remaining = road.length - v.position;
      if (!leader_found && remaining < need) {
        for (const Road* next : m_net->outgoing(road.to_node)) {
          if (!m_net->connects(v.road, next->id)) continue;
          auto n = m_lanes.find({next->id, entry_lane(*m_net, v.road, v.lane, next->id)});
          if (n == m_lanes.end() || n->second.empty()) continue;
          if (remaining + n->second.front().second < need) return false;
        }
      }
      return true;
    }

  private:
    const RoadNetwork* m_net;
    std::map<std::pair<RoadId, int>, std::vector<std::pair<double, double>>> m_lanes;  // (front, rear)
  };

  void set_phase(Phase p) {
    m_phase = p;
    if (phase_hook) phase_hook(p);
  }

  void notify_error(const std::exception& e) {
    for (Probe* p : m_probes) {
      try {
        p->on_error(*this, e);
      } catch (const std::exception& ex) {
        m_probe_failures.push_back({p->name(), ProbeEvent::Error, m_step, ex.what()});
      } catch (...) {
        m_probe_failures.push_back({p->name(), ProbeEvent::Error, m_step, "unknown exception"});
      }
    }
  }

  static std::string point_string(const RoadId& road, double pos) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ":%g", pos);
    return road + buf;
  }

  std::size_t index_of(ClusterId id) const {
    auto it = std::lower_bound(m_clusters.begin(), m_clusters.end(), id,
                               [](const Cluster& c, ClusterId x) { return c.id < x; });
    if (it == m_clusters.end() || it->id != id) throw UnknownTarget("no cluster " + std::to_string(id));
    return static_cast<std::size_t>(it - m_clusters.begin());
  }
  bool contains_id(ClusterId id) const {
    return std::any_of(m_clusters.begin(), m_clusters.end(), [id](const Cluster& c) { return c.id == id; });
  }
  Cluster& mutable_cluster(ClusterId id) { return m_clusters[index_of(id)]; }

  VehicleFactory factory() { return VehicleFactory{&m_model.population, &m_rng, &m_next_vehicle}; }

  Vehicle make_generated(std::size_t gi, const VehicleSpec& spec) {
    const auto& point = m_generators[gi].spec().point;
    Vehicle v;
    v.id = m_next_vehicle++;
    v.road = point.road;
    v.lane = spec.lane;
    v.position = 0.0;
    v.length = spec.length;
    v.params = spec.params;
    v.speed = std::min(spec.speed, speed_limit_at(m_model.network.road(point.road), spec.lane, 0.0));
    v.route = m_routes[gi];
    v.route_index = 0;
    return v;
  }

  // Rear bumper of the first vehicle beyond the end of `c` in each lane.
  LeadingRear leading_rear_for(const Cluster& c) {
    return [this, end = c.last()](int lane) {
      const auto& net = m_model.network;
      const Road& road = net.road(end.road);
      double best = kInf;
      for (const auto& o : m_clusters)
        for (const auto& v : o.vehicles)
          if (v.road == end.road && v.lane == lane && v.position > end.end) best = std::min(best, v.rear());
      if (end.end >= road.length - kPointTolerance) {
        auto out = net.outgoing(road.to_node);
        if (out.size() == 1) {
          const int next_lane = entry_lane(net, end.road, lane, out.front()->id);
          for (const auto& o : m_clusters)
            for (const auto& v : o.vehicles)
              if (v.road == out.front()->id && v.lane == next_lane) best = std::min(best, road.length + v.rear());
        }
      }
      return best;
    };
  }

  void rebuild_topology() {
    const auto& net = m_model.network;
    m_lookup.clear();
    for (const auto& c : m_clusters)
      for (const auto& p : c.extent) m_lookup[p.road].emplace_back(p.start, p.end, c.id);
    for (auto& [_, v] : m_lookup) std::sort(v.begin(), v.end());

    std::map<NetPoint, BoundaryInterface> next;
    for (const auto& c : m_clusters) {
      auto up = upstream_point(net, c);
      if (!up) continue;
      const Cluster* u = nullptr;
      for (const auto& o : m_clusters)
        if (ends_at(o, *up)) u = &o;
      if (!u) continue;
      NetPoint key{c.first().road, c.first().start};
      BoundaryInterface iface;
      if (auto it = m_ifaces.find(key); it != m_ifaces.end()) {
        iface = std::move(it->second);
        m_ifaces.erase(it);
      }
      iface.road = key.first;
      iface.position = key.second;
      iface.upstream = u->id;
      iface.downstream = c.id;
      iface.lanes = net.road(key.first).lane_count;
      iface.carryover.resize(static_cast<std::size_t>(iface.lanes), 0.0);
      next.emplace(key, std::move(iface));
    }
    // Interfaces that vanished hand their mass to the cluster now covering their point.
    for (auto& [key, old] : m_ifaces) {
      const double m = old.mass();
      if (m == 0.0) continue;
      if (const Cluster* at = cluster_at(key.first, key.second)) m_clusters[index_of(at->id)].residual += m;
    }
    m_ifaces = std::move(next);
  }

  void memorize(Vehicle& v, const Perception& per) {
    v.previous_gap = per.current.leader_gap;
    if (v.speed > 0.1) return;
    for (const auto& s : m_model.network.road(v.road).signs) {
      if (s.kind != SignKind::Stop || !s.applies_to(v.lane) || s.position < v.position || s.position == v.cleared_stop)
        continue;
      if (s.position - v.position <= v.params.s0 + 1.0) v.cleared_stop = s.position;
      break;
    }
  }

  // Outflow of every macro cluster this step, from the state at the start of the step.
  std::map<ClusterId, double> macro_outflows() const {
    const auto& net = m_model.network;
    const double dt = m_model.time_step;
    std::map<ClusterId, double> out;
    for (const auto& c : m_clusters) {
      if (!c.is_macro()) continue;
      const auto& fd = c.macro.fd;
      const MacroCell& last = c.macro.cells.back();
      double sup = 0.0;
      if (auto p = downstream_point(net, c)) {
        auto it = m_ifaces.find(*p);
        if (it != m_ifaces.end()) {
          const auto& iface = it->second;
          const Cluster& d = cluster(iface.downstream);
          if (d.is_macro())
            sup = std::max(0.0, supply(d.macro.cells.front(), d.macro.fd) - iface.backlog / dt);
          else
            sup = micro_receiving_supply(iface, last, fd);
        }
      } else {
        const Road& r = net.road(c.last().road);
        if (c.last().end >= r.length - kPointTolerance && net.sink_at(r.to_node)) sup = kInf;
      }
      out[c.id] = std::min(demand(last, fd), sup);
    }
    return out;
  }

  void react_macro(const std::map<ClusterId, double>& outflows) {
    const auto& net = m_model.network;
    const double dt = m_model.time_step;
    for (auto& c : m_clusters) {
      if (!c.is_macro()) continue;
      const NetPoint start{c.first().road, c.first().start};
      BoundaryInterface* in = nullptr;
      if (auto it = m_ifaces.find(start); it != m_ifaces.end()) in = &it->second;
      double upstream_out = 0.0;
      if (in) {
        const Cluster& u = cluster(in->upstream);
        if (u.is_macro()) upstream_out = outflows.at(u.id);
      }
      std::vector<Generator*> sources;
      std::vector<Generator*> inner;
      for (auto& g : m_generators) {
        const auto& road = g.spec().point.road;
        if (!c.contains(road, 0.0)) continue;
        (road == start.first && start.second <= kPointTolerance ? sources : inner).push_back(&g);
      }
      double offered = upstream_out + (in ? in->backlog / dt : 0.0);
      for (Generator* g : sources) offered += g->macro_backlog / dt;

      const CtmResult res = ctm_step(c.macro, offered, outflows.at(c.id), dt);
      m_flows[c.id].inflow += res.accepted_inflow;
      m_flows[c.id].outflow += res.outflow;

      // Accepted mass is taken from the upstream cluster first, then the interface
      // backlog, then the sources. Whatever the upstream sent but was refused waits in
      // the backlog.
      double rem = res.accepted_inflow * dt;
      if (in) {
        const double a1 = std::min(rem, upstream_out * dt);
        rem -= a1;
        in->backlog += upstream_out * dt - a1;
        const double a2 = std::min(rem, std::max(0.0, in->backlog));
        in->backlog -= a2;
        rem -= a2;
      }
      for (Generator* g : sources) {
        const double take = std::min(rem, g->macro_backlog);
        g->macro_backlog -= take;
        rem -= take;
      }
      // Sources in the middle of the cluster fill their cell directly, up to jam density.
      for (Generator* g : inner) {
        const long i = cell_index(c.macro.cells, g->spec().point.road, 0.0);
        if (i < 0 || g->macro_backlog <= 0.0) continue;
        auto& cell = c.macro.cells[static_cast<std::size_t>(i)];
        const double room = std::max(0.0, (cell_fd(cell, c.macro.fd).rho_jam - cell.rho) * cell.dx * cell.lanes);
        const double take = std::min(room, g->macro_backlog);
        cell.rho += take / (cell.dx * cell.lanes);
        g->macro_backlog -= take;
      }

      // Where the outflow goes.
      if (res.outflow <= 0.0) continue;
      if (auto p = downstream_point(net, c)) {
        auto it = m_ifaces.find(*p);
        if (it == m_ifaces.end()) continue;
        auto& iface = it->second;
        Cluster& d = m_clusters[index_of(iface.downstream)];
        if (d.is_micro()) {
          const long before = static_cast<long>(iface.pending.size());
          accumulate_release(iface, res.outflow, c.macro.cells.back(), c.macro.fd, dt, net, factory());
          m_ledger.released += static_cast<long>(iface.pending.size()) - before;
        }
      } else {
        m_ledger.absorbed += res.outflow * dt;
      }
    }
  }

  void react_micro(std::vector<Vehicle*>& agents, const std::vector<MicroInfluence>& influences,
                   SystemInfluences& sys) {
    const auto& net = m_model.network;
    const double dt = m_model.time_step;

    // Ballistic integration with a non-negative speed.
    for (std::size_t k = 0; k < agents.size(); ++k) {
      Vehicle& v = *agents[k];
      const double a = influences[k].acceleration;
      if (v.speed + a * dt >= 0.0) {
        v.position += v.speed * dt + 0.5 * a * dt * dt;
        v.speed += a * dt;
      } else {
        v.position += -v.speed * v.speed / (2.0 * a);
        v.speed = 0.0;
      }
    }

    // Lane occupancy after integration.
    using LaneKey = std::pair<RoadId, int>;
    std::map<LaneKey, std::vector<Vehicle*>> lanes;
    for (Vehicle* v : agents) lanes[{v->road, v->lane}].push_back(v);
    for (auto& [_, l] : lanes) std::sort(l.begin(), l.end(), MicroIndex::order);
    auto fits = [&](const Vehicle& v, const LaneKey& key) {
      auto it = lanes.find(key);
      if (it == lanes.end()) return true;
      for (const Vehicle* o : it->second) {
        if (o == &v) continue;
        if (o->position >= v.position ? o->rear() - v.position < 0.0 : v.rear() - o->position < 0.0) return false;
      }
      return true;
    };
    auto move_lane = [&](Vehicle* v, const LaneKey& to) {
      auto& from = lanes[{v->road, v->lane}];
      from.erase(std::find(from.begin(), from.end(), v));
      auto& l = lanes[to];
      l.insert(std::upper_bound(l.begin(), l.end(), v, MicroIndex::order), v);
    };

    // Lane changes, in vehicle id order; a change that would overlap is dropped.
    std::vector<std::size_t> changers;
    for (std::size_t k = 0; k < agents.size(); ++k)
      if (influences[k].lane_change != LaneChangeDecision::Stay) changers.push_back(k);
    std::sort(changers.begin(), changers.end(), [&](std::size_t a, std::size_t b) { return agents[a]->id < agents[b]->id; });
    for (std::size_t k : changers) {
      Vehicle& v = *agents[k];
      const int target = v.lane + (influences[k].lane_change == LaneChangeDecision::Left ? -1 : 1);
      if (target < 0 || target >= net.road(v.road).lane_count) continue;
      const LaneKey key{v.road, target};
      if (!fits(v, key)) continue;
      move_lane(&v, key);
      v.lane = target;
    }

    // Node crossings, furthest first.
    std::vector<Vehicle*> over;
    for (Vehicle* v : agents)
      if (v->position > net.road(v->road).length) over.push_back(v);
    std::sort(over.begin(), over.end(), [&](const Vehicle* a, const Vehicle* b) {
      const double ea = a->position - net.road(a->road).length;
      const double eb = b->position - net.road(b->road).length;
      return ea != eb ? ea > eb : a->id < b->id;
    });
    std::set<VehicleId> absorbed;
    for (Vehicle* v : over) {
      for (int guard = 0; guard < 8; ++guard) {
        const Road& road = net.road(v->road);
        if (v->position <= road.length) break;
        auto next = next_road_for(net, *v);
        if (!next) {
          if (net.sink_at(road.to_node) || on_final_road(*v)) {
            sys.removals.push_back(v->id);
            absorbed.insert(v->id);
          } else {
            v->position = road.length;
            v->speed = 0.0;
          }
          break;
        }
        const int lane = entry_lane(net, v->road, v->lane, *next);
        const double pos = v->position - road.length;
        const LaneKey key{*next, lane};
        if (auto it = lanes.find(key); it != lanes.end()) {
          const Vehicle* first = nullptr;
          for (const Vehicle* o : it->second)
            if (o != v) {
              first = o;
              break;
            }
          if (first && first->rear() < pos) {
            v->position = road.length;
            v->speed = 0.0;
            break;
          }
        }
        const bool planned = planned_next_road(*v).has_value();
        auto& from = lanes[{v->road, v->lane}];
        from.erase(std::find(from.begin(), from.end(), v));
        if (planned) ++v->route_index;
        v->road = *next;
        v->lane = lane;
        v->position = pos;
        v->cleared_stop = -kInf;
        auto& l = lanes[key];
        l.insert(std::upper_bound(l.begin(), l.end(), v, MicroIndex::order), v);
      }
    }

    if (m_cfg.check_overlaps)
      for (const auto& [key, l] : lanes)
        for (std::size_t i = 0; i + 1 < l.size(); ++i) {
          if (absorbed.count(l[i]->id) || absorbed.count(l[i + 1]->id)) continue;
          if (l[i + 1]->rear() - l[i]->position < -1e-6)
            throw OverlapDetected("vehicles " + std::to_string(l[i]->id) + " and " + std::to_string(l[i + 1]->id) +
                                  " overlap on " + key.first + " lane " + std::to_string(key.second) + " at step " +
                                  std::to_string(m_step + 1));
        }

    // Cluster membership: vehicles entering a macro cluster are handed to its interface.
    std::map<ClusterId, std::vector<Vehicle>> arriving;
    std::map<NetPoint, int> crossings;
    for (auto& c : m_clusters) {
      if (!c.is_micro()) continue;
      std::vector<Vehicle> keep;
      keep.reserve(c.vehicles.size());
      for (auto& v : c.vehicles) {
        const Cluster* at = absorbed.count(v.id) ? &c : cluster_at(v.road, v.position);
        if (!at) throw Error("vehicle " + std::to_string(v.id) + " left the network");
        if (at->id == c.id) {
          keep.push_back(std::move(v));
          continue;
        }
        m_flows[c.id].outflow += 1.0 / dt;
        if (at->is_micro()) {
          m_flows[at->id].inflow += 1.0 / dt;
          arriving[at->id].push_back(std::move(v));
        } else {
          ++crossings[{at->first().road, at->first().start}];
        }
      }
      c.vehicles = std::move(keep);
    }
    for (auto& [id, vs] : arriving) {
      auto& target = m_clusters[index_of(id)].vehicles;
      for (auto& v : vs) target.push_back(std::move(v));
    }
    for (const auto& [key, n] : crossings) {
      auto it = m_ifaces.find(key);
      if (it != m_ifaces.end()) {
        micro_to_macro_flux(it->second, n, dt);
      } else {
        const Cluster* at = cluster_at(key.first, key.second);
        m_clusters[index_of(at->id)].residual += n;
      }
    }
  }

  void refine(Cluster& c) {
    const double boundary_speed = cell_mean_speed(c.macro.cells.front(), c.macro.fd);
    disaggregate_cluster(c, m_model.network, factory(), leading_rear_for(c));
    c.refined = true;
    c.last_switch = m_label;
    c.jam_steps = c.free_steps = 0;
    // Backlog waiting at the entry becomes vehicles waiting to be inserted.
    if (auto it = m_ifaces.find({c.first().road, c.first().start}); it != m_ifaces.end()) {
      auto& iface = it->second;
      const Road& road = m_model.network.road(iface.road);
      if (iface.carryover.size() != static_cast<std::size_t>(iface.lanes)) iface.carryover.assign(iface.lanes, 0.0);
      for (auto& x : iface.carryover) x += iface.backlog / iface.lanes;
      iface.backlog = 0.0;
      auto f = factory();
      for (int lane = 0; lane < iface.lanes; ++lane) {
        auto& x = iface.carryover[static_cast<std::size_t>(lane)];
        while (x >= 1.0) {
          x -= 1.0;
          const double speed = std::min(boundary_speed, speed_limit_at(road, lane, iface.position));
          iface.pending.push_back(f.make(iface.road, lane, iface.position, speed));
        }
      }
    }
    for (std::size_t gi = 0; gi < m_generators.size(); ++gi) {
      auto& g = m_generators[gi];
      if (!c.contains(g.spec().point.road, 0.0)) continue;
      const auto& lanes = g.spec().point.lanes;
      std::size_t k = 0;
      while (g.macro_backlog >= 1.0 && !lanes.empty()) {
        g.macro_backlog -= 1.0;
        g.queue.push_back(make_generated(gi, g.draw(lanes[k++ % lanes.size()])));
      }
    }
  }

  void coarsen(Cluster& c) {
    aggregate_cluster(c, m_model.network, m_model.macro);
    c.refined = false;
    c.last_switch = m_label;
    c.jam_steps = c.free_steps = 0;
    if (auto it = m_ifaces.find({c.first().road, c.first().start}); it != m_ifaces.end()) {
      auto& iface = it->second;
      iface.backlog += static_cast<double>(iface.pending.size());
      for (auto& x : iface.carryover) {
        iface.backlog += x;
        x = 0.0;
      }
      iface.pending.clear();
    }
    for (auto& g : m_generators) {
      if (!c.contains(g.spec().point.road, 0.0)) continue;
      g.macro_backlog += static_cast<double>(g.queue.size());
      g.queue.clear();
    }
  }

  ScenarioModel m_model;
  EngineConfig m_cfg;
  Rng m_rng;
  VehicleId m_next_vehicle = 1;
  ClusterId m_next_cluster = 1;
  long m_step = 0;
  long m_label = 0;  ///< step number stamped on switches and transitions
  bool m_initialized = false;
  Phase m_phase = Phase::Idle;
  double m_initial_mass = 0.0;
  double m_last_wall = 0.0;
  std::optional<std::string> m_error;

  std::vector<Cluster> m_clusters;  ///< sorted by id
  std::map<NetPoint, BoundaryInterface> m_ifaces;  ///< keyed by the downstream cluster's start
  std::vector<Generator> m_generators;
  std::vector<Route> m_routes;  ///< per generator
  Ledger m_ledger;
  std::vector<TransitionRecord> m_transitions;
  std::map<ClusterId, ClusterFlow> m_flows;
  std::map<RoadId, std::vector<std::tuple<double, double, ClusterId>>> m_lookup;

  std::vector<Probe*> m_probes;
  std::vector<ProbeFailure> m_probe_failures;
};

}  // namespace hytraffic
