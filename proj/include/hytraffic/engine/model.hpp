/// @file model.hpp
/// @brief Declarative simulation model: everything a scenario specifies, no execution state.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "../gen/generator.hpp"
#include "../hybrid/cluster.hpp"
#include "../hybrid/topology.hpp"
#include "../lod/controller.hpp"
#include "../network/network.hpp"

namespace hytraffic {

/// Initial cluster of a scenario.
struct ClusterSpec {
  ClusterId id = 0;
  Representation representation = Representation::Micro;
  std::vector<ExtentPiece> extent;
  double initial_density = 0.0;  ///< [veh/m/lane], spread uniformly at start

  bool operator==(const ClusterSpec&) const = default;
};

struct ScenarioModel {
  std::string name = "scenario";
  double time_step = 0.25;  ///< [s]
  double duration = 0.0;    ///< [s]
  double free_speed = kInf; ///< network free speed used by routing [m/s]

  RoadNetwork network;
  MacroConfig macro;
  std::vector<ClusterSpec> clusters;  ///< empty: one microscopic cluster per road
  LodPolicy lod;
  Population population;              ///< drivers of vehicles created by conversions
  std::vector<GeneratorSpec> generators;

  // File layout, kept so a parsed scenario can be written back in the same shape.
  std::string infrastructure_file = "infrastructure.xml";
  std::string level_file = "microscopicLevel.xml";

  long steps() const { return time_step > 0.0 ? static_cast<long>(std::floor(duration / time_step + 1e-9)) : 0; }

  bool operator==(const ScenarioModel&) const = default;
};

/// Clusters of `m`, or the default one-cluster-per-road layout.
inline std::vector<ClusterSpec> effective_clusters(const ScenarioModel& m) {
  if (!m.clusters.empty()) return m.clusters;
  std::vector<const Road*> roads;
  for (const auto& r : m.network.roads()) roads.push_back(&r);
  std::sort(roads.begin(), roads.end(), [](const Road* a, const Road* b) { return a->id < b->id; });
  std::vector<ClusterSpec> out;
  ClusterId id = 1;
  for (const Road* r : roads) out.push_back({id++, Representation::Micro, {{r->id, 0.0, r->length}}, 0.0});
  return out;
}

/// Problems with the cluster layout: pieces outside roads, gaps, overlaps, duplicate ids,
/// macro clusters without a single entry and exit.
inline std::vector<std::string> partition_problems(const RoadNetwork& net, const std::vector<ClusterSpec>& clusters) {
  std::vector<std::string> out;
  std::map<RoadId, std::vector<std::pair<double, double>>> cover;
  std::set<ClusterId> ids;
  for (const auto& c : clusters) {
    if (!ids.insert(c.id).second) out.push_back("duplicate cluster id " + std::to_string(c.id));
    if (c.extent.empty()) out.push_back("cluster " + std::to_string(c.id) + " has an empty extent");
    for (const auto& p : c.extent) {
      const Road* r = net.find_road(p.road);
      if (!r) {
        out.push_back("cluster " + std::to_string(c.id) + " references unknown road '" + p.road + "'");
        continue;
      }
      if (!(p.start >= 0.0 && p.end <= r->length + kPointTolerance && p.start < p.end))
        out.push_back("cluster " + std::to_string(c.id) + " piece " + p.road + " is out of range");
      cover[p.road].push_back({p.start, p.end});
    }
    for (std::size_t i = 0; i + 1 < c.extent.size(); ++i) {
      const auto& a = c.extent[i];
      const auto& b = c.extent[i + 1];
      const Road* ra = net.find_road(a.road);
      if (!ra || !net.find_road(b.road)) continue;
      const bool same_road = a.road == b.road && std::abs(a.end - b.start) <= kPointTolerance;
      const bool via_node = std::abs(a.end - ra->length) <= kPointTolerance && b.start <= kPointTolerance &&
                            net.connects(a.road, b.road);
      if (!same_road && !via_node) out.push_back("cluster " + std::to_string(c.id) + " is not contiguous");
    }
    if (c.representation == Representation::Macro && !c.extent.empty()) {
      bool known = true;
      for (const auto& p : c.extent) known = known && net.find_road(p.road);
      Cluster probe;
      probe.extent = c.extent;
      if (known && !can_be_macro(net, probe))
        out.push_back("macro cluster " + std::to_string(c.id) + " needs a single entry and exit");
    }
    if (!(c.initial_density >= 0.0)) out.push_back("cluster " + std::to_string(c.id) + " has a negative density");
  }
  for (const auto& r : net.roads()) {
    auto& iv = cover[r.id];
    std::sort(iv.begin(), iv.end());
    double at = 0.0;
    for (const auto& [s, e] : iv) {
      if (s > at + kPointTolerance) out.push_back("road '" + r.id + "' is not covered on [" + std::to_string(at) + ", " + std::to_string(s) + ")");
      if (s < at - kPointTolerance) out.push_back("road '" + r.id + "' is covered twice near " + std::to_string(s));
      at = std::max(at, e);
    }
    if (at < r.length - kPointTolerance) out.push_back("road '" + r.id + "' is not covered up to its end");
  }
  return out;
}

}  // namespace hytraffic
