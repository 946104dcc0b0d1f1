/// @file ctm.hpp
/// @brief LWR traffic flow discretized with the cell transmission scheme.
///
/// Triangular fundamental diagram: free branch q = v_f * rho up to the critical
/// density, congested branch q = w * (rho_jam - rho) beyond it. Densities are per
/// lane; demands, supplies and interface fluxes are summed over lanes.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../network/network.hpp"

namespace hytraffic {

struct FundamentalDiagram {
  double v_f = 25.0;      ///< free-flow speed [m/s]
  double w = 0.5 / (0.15 - 0.5 / 25.0);  ///< backward wave speed [m/s]
  double rho_jam = 0.15;  ///< jam density [veh/m/lane]
  double q_max = 0.5;     ///< capacity [veh/s/lane]

  static FundamentalDiagram triangular(double v_f, double rho_jam, double q_max) {
    FundamentalDiagram fd;
    fd.v_f = v_f;
    fd.rho_jam = rho_jam;
    fd.q_max = q_max;
    fd.w = q_max / (rho_jam - q_max / v_f);
    return fd;
  }

  double rho_c() const { return q_max / v_f; }

  /// Same jam density and wave speed, free-flow speed lowered to `u`.
  FundamentalDiagram with_free_speed(double u) const {
    if (!(u < v_f)) return *this;
    FundamentalDiagram fd = *this;
    fd.v_f = u;
    const double rc = w * rho_jam / (u + w);
    fd.q_max = u * rc;
    return fd;
  }

  std::string invalid_field() const {
    if (!(v_f > 0)) return "v_f";
    if (!(w > 0)) return "w";
    if (!(rho_jam > 0)) return "rho_jam";
    if (!(q_max > 0)) return "q_max";
    if (!(rho_c() < rho_jam)) return "q_max";
    return {};
  }

  bool operator==(const FundamentalDiagram&) const = default;
};

struct MacroCell {
  double dx = 100.0;
  int lanes = 1;
  double rho = 0.0;          ///< [veh/m/lane]
  double v_cap = std::numeric_limits<double>::infinity();  ///< local speed limit
  RoadId road;               ///< location, used for conversions and reporting
  double start = 0.0;
  // Level-of-detail counters, carried with the cell through splits and merges.
  int jam_steps = 0;
  int free_steps = 0;

  double mass() const { return rho * dx * lanes; }
  bool operator==(const MacroCell&) const = default;
};

struct MacroSegment {
  std::vector<MacroCell> cells;
  FundamentalDiagram fd;

  double mass() const {
    double m = 0.0;
    for (const auto& c : cells) m += c.mass();
    return m;
  }
  double length() const {
    double l = 0.0;
    for (const auto& c : cells) l += c.dx;
    return l;
  }
  bool operator==(const MacroSegment&) const = default;
};

/// Fundamental diagram in force in `cell`: the segment's, slowed to the local limit.
inline FundamentalDiagram cell_fd(const MacroCell& cell, const FundamentalDiagram& fd) {
  return fd.with_free_speed(std::min(fd.v_f, cell.v_cap));
}

inline double fd_flow(double rho, const FundamentalDiagram& fd) {
  constexpr double tol = 1e-12;
  if (rho < -tol || rho > fd.rho_jam + tol) throw DensityOutOfRange(rho);
  rho = std::clamp(rho, 0.0, fd.rho_jam);
  return std::min(fd.v_f * rho, fd.w * (fd.rho_jam - rho));
}

inline double demand(const MacroCell& cell, const FundamentalDiagram& seg_fd) {
  const auto fd = cell_fd(cell, seg_fd);
  return cell.lanes * std::max(0.0, std::min(fd.v_f * cell.rho, fd.q_max));
}

inline double supply(const MacroCell& cell, const FundamentalDiagram& seg_fd) {
  const auto fd = cell_fd(cell, seg_fd);
  return cell.lanes * std::max(0.0, std::min(fd.q_max, fd.w * (fd.rho_jam - cell.rho)));
}

inline double cell_mean_speed(const MacroCell& cell, const FundamentalDiagram& seg_fd) {
  const auto fd = cell_fd(cell, seg_fd);
  if (cell.rho <= 0.0) return fd.v_f;
  return fd_flow(cell.rho, fd) / cell.rho;
}

/// Ratio of mean speed to free-flow speed in `cell`; 1 in free flow.
inline double speed_ratio(const MacroCell& cell, const FundamentalDiagram& seg_fd) {
  return cell_mean_speed(cell, seg_fd) / cell_fd(cell, seg_fd).v_f;
}

/// Largest stable time step for `segment`.
inline double cfl_limit(const MacroSegment& segment) {
  double limit = std::numeric_limits<double>::infinity();
  for (const auto& c : segment.cells) limit = std::min(limit, c.dx / std::max(segment.fd.v_f, segment.fd.w));
  return limit;
}

inline void check_cfl(const MacroSegment& segment, double dt) {
  for (const auto& c : segment.cells)
    if (dt > c.dx / std::max(segment.fd.v_f, segment.fd.w) * (1.0 + 1e-12)) throw CflViolation(dt, c.dx);
}

struct CtmResult {
  double accepted_inflow = 0.0;  ///< [veh/s]
  double outflow = 0.0;          ///< [veh/s]
};

/// One explicit step of the cell transmission scheme, in place.
inline CtmResult ctm_step(MacroSegment& segment, double upstream_inflow, double downstream_supply, double dt) {
  check_cfl(segment, dt);
  auto& cells = segment.cells;
  const auto& fd = segment.fd;
  const std::size_t n = cells.size();
  if (n == 0) return {};

  std::vector<double> flux(n + 1);
  flux[0] = std::min(std::max(upstream_inflow, 0.0), supply(cells[0], fd));
  for (std::size_t i = 1; i < n; ++i) flux[i] = std::min(demand(cells[i - 1], fd), supply(cells[i], fd));
  flux[n] = std::min(demand(cells[n - 1], fd), std::max(downstream_supply, 0.0));

  for (std::size_t i = 0; i < n; ++i) {
    auto& c = cells[i];
    c.rho += dt / (c.dx * c.lanes) * (flux[i] - flux[i + 1]);
  }
  return {flux[0], flux[n]};
}

}  // namespace hytraffic
