// Independent reference computations and scenario builders shared by the test suites.
// Nothing here calls into the code under test except for plain data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hytraffic/hytraffic.hpp"

namespace oracle {

constexpr double inf = std::numeric_limits<double>::infinity();

// IDM written out term by term.
inline double idm(double v, double s, double dv, double v0, double T, double a, double b, double delta, double s0) {
  double star = s0 + v * T + v * dv / (2.0 * std::sqrt(a * b));
  if (star < s0) star = s0;
  const double free_term = 1.0 - std::pow(v / v0, delta);
  if (std::isinf(s)) return a * free_term;
  return a * (free_term - (star / s) * (star / s));
}

inline double idm(double v, double s, double dv, const hytraffic::DriverParams& p) {
  return idm(v, s, dv, p.v0, p.T, p.a_max, p.b, p.delta, p.s0);
}

// Root of idm(v, s, 0) = 0 in s by bisection.
inline double equilibrium_gap_bisect(double v, const hytraffic::DriverParams& p) {
  double lo = 1e-6, hi = 1e6;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (idm(v, mid, 0.0, p) < 0.0) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Triangular fundamental diagram evaluated directly.
inline double tri_flow(double rho, double vf, double rho_jam, double q_max) {
  const double w = q_max / (rho_jam - q_max / vf);
  return std::min(vf * rho, w * (rho_jam - rho));
}

inline double rankine_hugoniot(double rho_l, double rho_r, double vf = 25.0, double rho_jam = 0.15, double q_max = 0.5) {
  return (tri_flow(rho_r, vf, rho_jam, q_max) - tri_flow(rho_l, vf, rho_jam, q_max)) / (rho_r - rho_l);
}

// All simple paths from `origin` to a road ending at the sink's node; returns the
// minimum travel time and the set of optimal paths.
inline std::pair<double, std::vector<std::vector<std::string>>> brute_force_routes(
    const hytraffic::RoadNetwork& net, const std::string& origin, const std::string& sink, double free_speed = inf) {
  const auto* end = net.find_sink(sink);
  double best = inf;
  std::vector<std::vector<std::string>> best_paths;
  std::vector<std::string> path{origin};
  std::set<std::string> used{origin};
  std::function<void(double)> dfs = [&](double cost) {
    const auto& r = net.road(path.back());
    if (r.to_node == end->node) {
      if (cost < best - 1e-9) {
        best = cost;
        best_paths = {path};
      } else if (std::abs(cost - best) <= 1e-9) {
        best_paths.push_back(path);
      }
    }
    for (const auto* next : net.outgoing(r.to_node)) {
      if (used.count(next->id)) continue;
      bool permitted = false;
      for (const auto& t : net.node(r.to_node).turn_map)
        if (t.from_road == r.id && t.to_road == next->id) permitted = true;
      if (!permitted) continue;
      used.insert(next->id);
      path.push_back(next->id);
      dfs(cost + next->length / std::min(next->speed_limit, free_speed));
      path.pop_back();
      used.erase(next->id);
    }
  };
  const auto& o = net.road(origin);
  dfs(o.length / std::min(o.speed_limit, free_speed));
  return {best, best_paths};
}

struct Neighbors {
  double leader_gap = inf;
  double leader_speed = 0.0;
  double follower_gap = inf;
};

// O(n^2) same-road neighbor scan.
inline Neighbors scan(const std::vector<hytraffic::Vehicle>& all, const hytraffic::Vehicle& self, int lane) {
  Neighbors n;
  for (const auto& o : all) {
    if (o.id == self.id || o.road != self.road || o.lane != lane) continue;
    const bool ahead = o.position > self.position || (o.position == self.position && o.id > self.id);
    if (ahead) {
      const double gap = o.position - o.length - self.position;
      if (gap < n.leader_gap) {
        n.leader_gap = gap;
        n.leader_speed = o.speed;
      }
    } else {
      const double gap = self.position - self.length - o.position;
      if (gap < n.follower_gap) n.follower_gap = gap;
    }
  }
  return n;
}

}  // namespace oracle

namespace build {

using namespace hytraffic;

inline std::vector<Turn> straight_turns(const RoadId& from, const RoadId& to, int lanes) {
  std::vector<Turn> t;
  for (int l = 0; l < lanes; ++l) t.push_back({from, l, to, l});
  return t;
}

/// Chain of roads r1..rn between nodes N0..Nn, lane i continuing to lane i, with a sink
/// "out" at the last node.
inline RoadNetwork chain(const std::vector<double>& lengths, int lanes, double speed_limit = 30.0,
                         std::vector<InputPoint> inputs = {}) {
  std::vector<Road> roads;
  std::vector<Node> nodes;
  for (std::size_t i = 0; i <= lengths.size(); ++i) nodes.push_back({"N" + std::to_string(i), NodeKind::Crossroads, {}});
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::string id = "r" + std::to_string(i + 1);
    roads.push_back({id, "N" + std::to_string(i), "N" + std::to_string(i + 1), lengths[i], lanes, speed_limit, {}});
    if (i > 0) nodes[i].turn_map = straight_turns("r" + std::to_string(i), id, lanes);
  }
  return RoadNetwork(roads, nodes, std::move(inputs), {{"out", "N" + std::to_string(lengths.size())}});
}

/// One road looping from node N back to itself.
inline RoadNetwork ring(double length, int lanes, double speed_limit = 30.0) {
  std::vector<Road> roads{{"ring", "N", "N", length, lanes, speed_limit, {}}};
  std::vector<Node> nodes{{"N", NodeKind::Roundabout, straight_turns("ring", "ring", lanes)}};
  return RoadNetwork(roads, nodes);
}

inline GeneratorSpec flow_source(const std::string& id, const RoadId& road, std::vector<int> lanes, double q,
                                 std::optional<std::string> destination = "out", double insertion_speed = 25.0) {
  GeneratorSpec g;
  g.point = {id, road, std::move(lanes), std::move(destination)};
  g.population.insertion_speed = insertion_speed;
  g.rhythm.kind = Rhythm::Kind::Flow;
  g.rhythm.profile = {{0.0, q}};
  return g;
}

inline ScenarioModel model(RoadNetwork net, double dt, double duration) {
  ScenarioModel m;
  m.network = std::move(net);
  m.time_step = dt;
  m.duration = duration;
  m.lod.enabled = false;
  return m;
}

inline Vehicle vehicle(VehicleId id, const RoadId& road, int lane, double pos, double speed, double length = 4.0) {
  Vehicle v;
  v.id = id;
  v.road = road;
  v.lane = lane;
  v.position = pos;
  v.speed = speed;
  v.length = length;
  v.route = Route{{road}, std::nullopt};
  return v;
}

/// Macro cluster over one road piece with uniform density.
inline Cluster macro_cluster(ClusterId id, const RoadNetwork& net, std::vector<ExtentPiece> extent, double rho,
                             double dx = 100.0, FundamentalDiagram fd = {}) {
  Cluster c;
  c.id = id;
  c.root = id;
  c.extent = std::move(extent);
  c.representation = Representation::Macro;
  c.macro = MacroSegment{build_cells(c.extent, net, dx), fd};
  for (auto& cell : c.macro.cells) cell.rho = rho;
  return c;
}

inline Cluster micro_cluster(ClusterId id, std::vector<ExtentPiece> extent, std::vector<Vehicle> vehicles = {}) {
  Cluster c;
  c.id = id;
  c.root = id;
  c.extent = std::move(extent);
  c.representation = Representation::Micro;
  c.vehicles = std::move(vehicles);
  return c;
}

/// Probe recording callback names.
struct Recorder : Probe {
  std::string label;
  std::vector<std::string>* log;
  Recorder(std::string l, std::vector<std::string>* out) : label(std::move(l)), log(out) {}
  std::string name() const override { return label; }
  void on_simulation_start(const Engine&) override { log->push_back(label + ":start"); }
  void on_initialized(const Engine&) override { log->push_back(label + ":initialized"); }
  void on_step_end(const Engine& e) override { log->push_back(label + ":step" + std::to_string(e.step())); }
  void on_final(const Engine&) override { log->push_back(label + ":final"); }
  void on_error(const Engine&, const std::exception&) override { log->push_back(label + ":error"); }
};

}  // namespace build
