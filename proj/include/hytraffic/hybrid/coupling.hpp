/// @file coupling.hpp
/// @brief Micro/macro boundary interfaces and representation conversion.
///
/// Every conversion keeps the vehicle mass exact: fractional vehicles live in
/// explicit accumulators (interface carryover, backlog, cluster residual) instead of
/// being rounded away.
#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "../error.hpp"
#include "../gen/generator.hpp"
#include "cluster.hpp"

namespace hytraffic {

/// Vehicles allowed to wait per lane at a macro-to-micro boundary before the macro
/// side stops sending.
inline constexpr std::size_t kReleaseQueuePerLane = 2;

/// Point where one cluster hands traffic to the next. The boundary lies at the start
/// of the downstream cluster.
struct BoundaryInterface {
  RoadId road;
  double position = 0.0;
  ClusterId upstream = 0;
  ClusterId downstream = 0;
  int lanes = 1;
  std::vector<double> carryover;  ///< fractional vehicles per lane, in [0,1) after each step
  std::deque<Vehicle> pending;    ///< created vehicles waiting for a safe insertion gap
  double backlog = 0.0;           ///< mass waiting to enter a macroscopic downstream cluster
  std::size_t next_lane = 0;      ///< round-robin cursor

  // Per-step diagnostics.
  int crossings = 0;

  double mass() const {
    double m = backlog + static_cast<double>(pending.size());
    for (double c : carryover) m += c;
    return m;
  }
  bool queue_full() const { return pending.size() > kReleaseQueuePerLane * static_cast<std::size_t>(lanes); }
};

/// Creates vehicles for conversions: draws parameters from one population and rng.
struct VehicleFactory {
  const Population* population = nullptr;
  Rng* rng = nullptr;
  VehicleId* next_id = nullptr;

  Vehicle make(const RoadId& road, int lane, double position, double speed) const {
    Vehicle v;
    v.id = (*next_id)++;
    v.road = road;
    v.lane = lane;
    v.position = position;
    v.params = population->sample(*rng);
    v.length = population->length;
    v.speed = speed;
    v.route = Route{{road}, std::nullopt};
    v.route_index = 0;
    return v;
  }
};

/// Insertion gap required in front of a new vehicle.
inline double insertion_gap(const Vehicle& v) { return v.params.s0 + v.speed * v.params.T; }

// ---------------------------------------------------------------------------
// Micro upstream, macro downstream.

/// Vehicles that crossed the boundary join the backlog; returns the inflow offered
/// to the downstream cell transmission step [veh/s].
inline double micro_to_macro_flux(BoundaryInterface& iface, int crossing_vehicles, double dt) {
  iface.crossings += crossing_vehicles;
  iface.backlog += crossing_vehicles;
  return iface.backlog / dt;
}

/// Removes the accepted part of the backlog.
inline void commit_macro_inflow(BoundaryInterface& iface, double accepted, double dt) {
  iface.backlog -= accepted * dt;
}

/// Micro vehicles see a standing obstacle at the boundary while the downstream cell
/// cannot take more traffic or too much mass is waiting to enter it.
inline bool boundary_blocked(const BoundaryInterface& iface, const MacroCell& first_cell,
                             const FundamentalDiagram& fd) {
  return iface.backlog >= static_cast<double>(kReleaseQueuePerLane * static_cast<std::size_t>(iface.lanes)) ||
         supply(first_cell, fd) <= 1e-12;
}

/// Vehicle the micro side perceives beyond an open micro-to-macro boundary: its rear
/// sits at the spacing implied by the first cell's density, minus the jam spacing,
/// and it moves at the cell's mean speed. None when that spacing exceeds the cell.
struct VirtualLeader {
  double offset = 0.0;  ///< rear bumper distance past the boundary
  double speed = 0.0;
};

inline std::optional<VirtualLeader> virtual_leader(const MacroCell& first_cell, const FundamentalDiagram& fd) {
  if (first_cell.rho <= 0.0) return std::nullopt;
  const auto local = cell_fd(first_cell, fd);
  const double offset = std::max(0.0, 1.0 / first_cell.rho - 1.0 / local.rho_jam);
  if (offset >= first_cell.dx) return std::nullopt;
  return VirtualLeader{offset, cell_mean_speed(first_cell, fd)};
}

// ---------------------------------------------------------------------------
// Macro upstream, micro downstream.

/// Supply the micro side reports to the upstream macro cluster [veh/s].
inline double micro_receiving_supply(const BoundaryInterface& iface, const MacroCell& boundary_cell,
                                     const FundamentalDiagram& fd) {
  if (iface.queue_full()) return 0.0;
  return iface.lanes * cell_fd(boundary_cell, fd).q_max;
}

/// Adds the macro outflow to the per-lane carryover and turns whole units into
/// pending vehicles at the boundary.
inline void accumulate_release(BoundaryInterface& iface, double outflow, const MacroCell& boundary_cell,
                               const FundamentalDiagram& fd, double dt, const RoadNetwork& net,
                               const VehicleFactory& factory) {
  if (iface.carryover.size() != static_cast<std::size_t>(iface.lanes)) iface.carryover.assign(iface.lanes, 0.0);
  const double per_lane = outflow * dt / iface.lanes;
  for (auto& c : iface.carryover) c += per_lane;
  const Road& road = net.road(iface.road);
  const double base_speed = cell_mean_speed(boundary_cell, fd);
  for (int k = 0; k < iface.lanes; ++k) {
    const int lane = static_cast<int>((iface.next_lane + static_cast<std::size_t>(k)) % iface.carryover.size());
    auto& c = iface.carryover[static_cast<std::size_t>(lane)];
    while (c >= 1.0) {
      c -= 1.0;
      const double speed = std::min(base_speed, speed_limit_at(road, lane, iface.position));
      iface.pending.push_back(factory.make(iface.road, lane, iface.position, speed));
    }
  }
  iface.next_lane = (iface.next_lane + 1) % iface.carryover.size();
}

/// Inserts pending vehicles in FIFO order per lane while `can_insert` accepts them.
inline std::vector<Vehicle> release_pending(BoundaryInterface& iface,
                                            const std::function<bool(const Vehicle&)>& can_insert) {
  std::vector<Vehicle> out;
  std::vector<bool> blocked(static_cast<std::size_t>(std::max(iface.lanes, 1)), false);
  std::deque<Vehicle> keep;
  for (auto& v : iface.pending) {
    const auto l = static_cast<std::size_t>(v.lane);
    if (l < blocked.size() && !blocked[l] && can_insert(v)) {
      out.push_back(std::move(v));
    } else {
      if (l < blocked.size()) blocked[l] = true;
      keep.push_back(std::move(v));
    }
  }
  iface.pending = std::move(keep);
  return out;
}

/// Convenience composition of accumulate_release and release_pending.
inline std::vector<Vehicle> macro_to_micro_release(BoundaryInterface& iface, double outflow,
                                                   const MacroCell& boundary_cell, const FundamentalDiagram& fd,
                                                   double dt, const RoadNetwork& net, const VehicleFactory& factory,
                                                   const std::function<bool(const Vehicle&)>& can_insert) {
  accumulate_release(iface, outflow, boundary_cell, fd, dt, net, factory);
  return release_pending(iface, can_insert);
}

// ---------------------------------------------------------------------------
// Whole-cluster conversions.

/// Micro -> Macro. Vehicles become cell densities; cells that would exceed jam
/// density push their overflow upstream (then downstream if the first cell overflows).
inline void aggregate_cluster(Cluster& cluster, const RoadNetwork& net, const MacroConfig& cfg) {
  if (!cluster.is_micro()) throw RepresentationMismatch("aggregate_cluster needs a micro cluster");
  auto cells = build_cells(cluster.extent, net, cfg.dx);
  std::vector<double> count(cells.size(), 0.0);
  for (const auto& v : cluster.vehicles) {
    long i = cell_index(cells, v.road, v.position);
    if (i < 0) throw OverCapacity("vehicle " + std::to_string(v.id) + " outside cluster extent");
    count[static_cast<std::size_t>(i)] += 1.0;
  }
  auto cap = [&](std::size_t i) { return cfg.fd.rho_jam * cells[i].dx * cells[i].lanes; };
  double total_cap = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) total_cap += cap(i);
  if (static_cast<double>(cluster.vehicles.size()) > total_cap + 1e-9)
    throw OverCapacity("cluster " + std::to_string(cluster.id) + " holds more vehicles than its jam capacity");

  for (std::size_t i = cells.size(); i-- > 1;) {
    const double excess = count[i] - cap(i);
    if (excess > 0) {
      count[i] -= excess;
      count[i - 1] += excess;
    }
  }
  for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
    const double excess = count[i] - cap(i);
    if (excess > 0) {
      count[i] -= excess;
      count[i + 1] += excess;
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].rho = count[i] / (cells[i].dx * cells[i].lanes);

  cluster.macro = MacroSegment{std::move(cells), cfg.fd};
  cluster.vehicles.clear();
  cluster.representation = Representation::Macro;
}

/// Rear bumper (road coordinates of the piece's road) of the first vehicle ahead of
/// the cluster end in `lane`, or +inf.
using LeadingRear = std::function<double(int lane)>;

/// Macro -> Micro. Cell masses are rounded through one cluster-wide accumulator,
/// scanned from the downstream end; the rounding error stays in the cluster residual.
/// Vehicles are spaced evenly within their cell and pushed upstream whenever the
/// spacing would fall below s0.
inline void disaggregate_cluster(Cluster& cluster, const RoadNetwork& net, const VehicleFactory& factory,
                                 const LeadingRear& leading_rear = {}) {
  if (!cluster.is_macro()) throw RepresentationMismatch("disaggregate_cluster needs a macro cluster");
  const auto& cells = cluster.macro.cells;
  const auto& fd = cluster.macro.fd;
  auto round_half_up = [](double x) { return std::floor(x + 0.5); };

  // Vehicle counts per (cell, lane).
  std::vector<std::vector<int>> counts(cells.size());
  double cum = cluster.residual;
  double placed = 0.0;
  for (std::size_t i = cells.size(); i-- > 0;) {
    counts[i].assign(static_cast<std::size_t>(cells[i].lanes), 0);
    const double per_lane = std::max(0.0, cells[i].rho * cells[i].dx);
    for (int l = 0; l < cells[i].lanes; ++l) {
      const double before = round_half_up(cum);
      cum += per_lane;
      const int n = static_cast<int>(round_half_up(cum) - before);
      counts[i][static_cast<std::size_t>(l)] = n;
      placed += n;
    }
  }
  const double mass_before = cluster.mass();

  std::vector<Vehicle> vehicles;
  // Place per piece and lane, downstream to upstream.
  for (std::size_t pi = cluster.extent.size(); pi-- > 0;) {
    const auto& piece = cluster.extent[pi];
    const Road& road = net.road(piece.road);
    const bool last_piece = pi + 1 == cluster.extent.size();
    for (int lane = 0; lane < road.lane_count; ++lane) {
      double limit = piece.end - 1e-6;  // front bumper stays inside [start, end)
      if (last_piece && leading_rear) {
        // The first vehicle beyond the cluster keeps at least s0 in front of the newcomers.
        limit = std::min(limit, leading_rear(lane) - 2.0);
      } else if (!last_piece) {
        limit = std::min(limit, piece.end - 2.0);
      }
      std::vector<Vehicle> lane_vehicles;
      for (std::size_t ci = cells.size(); ci-- > 0;) {
        const auto& c = cells[ci];
        if (c.road != piece.road || c.start < piece.start - 1e-9 || c.start >= piece.end) continue;
        const int n = counts[ci][static_cast<std::size_t>(lane)];
        if (n == 0) continue;
        const double slot = c.dx / n;
        const double speed = cell_mean_speed(c, fd);
        for (int k = n - 1; k >= 0; --k) {
          Vehicle v = factory.make(piece.road, lane, 0.0, 0.0);
          const double desired = c.start + slot * (k + 1) - 0.5 * std::max(0.0, slot - v.length);
          const double front = std::min(desired, limit);
          if (front - v.length < piece.start - 1e-9 && front < piece.start + v.length)
            throw OverCapacity("cannot place vehicles of cluster " + std::to_string(cluster.id) +
                               " without violating the minimum gap");
          v.position = front;
          v.speed = std::min(speed, speed_limit_at(road, lane, front));
          limit = front - v.length - v.params.s0;
          lane_vehicles.push_back(std::move(v));
        }
      }
      for (auto& v : lane_vehicles) vehicles.push_back(std::move(v));
    }
  }

  cluster.vehicles = std::move(vehicles);
  cluster.residual = mass_before - placed;
  cluster.macro = MacroSegment{};
  cluster.representation = Representation::Micro;
}

}  // namespace hytraffic
