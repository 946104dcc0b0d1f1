/// @file cluster.hpp
/// @brief Clusters: contiguous network extents simulated under one representation.
#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "../macro/ctm.hpp"
#include "../micro/vehicle.hpp"
#include "../network/network.hpp"

namespace hytraffic {

enum class Representation { Micro, Macro };

inline const char* to_string(Representation r) { return r == Representation::Micro ? "micro" : "macro"; }

using ClusterId = int;
inline constexpr long kNever = std::numeric_limits<long>::min() / 2;

/// Interval [start, end) of one road.
struct ExtentPiece {
  RoadId road;
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool contains(const RoadId& r, double pos) const { return r == road && pos >= start && pos < end; }
  bool operator==(const ExtentPiece&) const = default;
};

struct Cluster {
  ClusterId id = 0;
  std::vector<ExtentPiece> extent;  ///< in driving order
  Representation representation = Representation::Micro;
  std::vector<Vehicle> vehicles;    ///< iff Micro
  MacroSegment macro;               ///< iff Macro
  /// Fractional mass left over by conversions and merges; part of the cluster's mass.
  double residual = 0.0;

  // Level-of-detail bookkeeping.
  ClusterId root = 0;               ///< scenario cluster this one descends from
  bool refined = false;             ///< switched to Micro by the controller
  long last_switch = kNever;
  long last_jam = kNever;
  int jam_steps = 0;
  int free_steps = 0;

  bool is_micro() const { return representation == Representation::Micro; }
  bool is_macro() const { return representation == Representation::Macro; }

  double length() const {
    double l = 0.0;
    for (const auto& p : extent) l += p.length();
    return l;
  }

  /// Distance from the cluster start to (road, pos), if the point lies inside the extent.
  std::optional<double> offset_of(const RoadId& road, double pos) const {
    double off = 0.0;
    for (const auto& p : extent) {
      if (p.contains(road, pos)) return off + (pos - p.start);
      off += p.length();
    }
    return std::nullopt;
  }
  bool contains(const RoadId& road, double pos) const { return offset_of(road, pos).has_value(); }

  /// (road, position) at `offset` from the cluster start. The end of the extent maps
  /// to the end of the last piece.
  std::pair<RoadId, double> point_at(double offset) const {
    for (const auto& p : extent) {
      if (offset < p.length()) return {p.road, p.start + offset};
      offset -= p.length();
    }
    return {extent.back().road, extent.back().end};
  }

  const ExtentPiece& first() const { return extent.front(); }
  const ExtentPiece& last() const { return extent.back(); }

  /// Vehicle count or macroscopic mass, plus the residual.
  double mass() const {
    return (is_micro() ? static_cast<double>(vehicles.size()) : macro.mass()) + residual;
  }

  /// Mean speed over the cluster: vehicle average when Micro, flow over density when Macro.
  double mean_speed() const {
    if (is_micro()) {
      if (vehicles.empty()) return 0.0;
      double s = 0.0;
      for (const auto& v : vehicles) s += v.speed;
      return s / static_cast<double>(vehicles.size());
    }
    double flow = 0.0;
    double mass = 0.0;
    for (const auto& c : macro.cells) {
      flow += cell_mean_speed(c, macro.fd) * c.mass();
      mass += c.mass();
    }
    return mass > 0.0 ? flow / mass : macro.fd.v_f;
  }

  std::string extent_string() const {
    std::string s;
    for (const auto& p : extent) {
      if (!s.empty()) s += ';';
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s:%g-%g", p.road.c_str(), p.start, p.end);
      s += buf;
    }
    return s;
  }
};

/// Macroscopic discretization settings shared by every cluster.
struct MacroConfig {
  FundamentalDiagram fd{};
  double dx = 100.0;

  bool operator==(const MacroConfig&) const = default;
};

/// Cells covering `extent`: pieces are cut into cells of `dx` from their start; a final
/// remainder shorter than dx/2 is folded into the previous cell.
inline std::vector<MacroCell> build_cells(const std::vector<ExtentPiece>& extent, const RoadNetwork& net,
                                          double dx) {
  std::vector<MacroCell> cells;
  for (const auto& p : extent) {
    const Road& road = net.road(p.road);
    const double len = p.length();
    auto n = static_cast<long>(std::ceil(len / dx - 1e-9));
    n = std::max(n, 1L);
    if (n > 1 && len - static_cast<double>(n - 1) * dx < 0.5 * dx) --n;
    for (long i = 0; i < n; ++i) {
      MacroCell c;
      c.road = p.road;
      c.start = p.start + static_cast<double>(i) * dx;
      c.dx = (i + 1 == n) ? p.end - c.start : dx;
      c.lanes = road.lane_count;
      double cap = std::numeric_limits<double>::infinity();
      for (int l = 0; l < road.lane_count; ++l)
        cap = std::min(cap, min_speed_limit(road, l, c.start, c.start + c.dx));
      c.v_cap = cap;
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

/// Index of the cell of `cells` containing (road, pos), or -1.
inline long cell_index(const std::vector<MacroCell>& cells, const RoadId& road, double pos) {
  for (double tol : {0.0, 1e-9})
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (c.road == road && pos >= c.start - tol && pos < c.start + c.dx + tol) return static_cast<long>(i);
    }
  return -1;
}

}  // namespace hytraffic
