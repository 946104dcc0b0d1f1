/// @file records.hpp
/// @brief Per-step observations and their CSV/JSON encodings.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "../engine/engine.hpp"

namespace hytraffic {

struct ClusterRecord {
  ClusterId id = 0;
  Representation representation = Representation::Micro;
  std::string extent;
  double vehicles = 0.0;  ///< vehicle count (micro) or mass (macro), residual included
  double density = 0.0;   ///< [veh/m/lane] over the extent
  double mean_speed = 0.0;
  double inflow = 0.0;    ///< [veh/s] during the step
  double outflow = 0.0;
};

struct StepRecord {
  long step = 0;
  double time = 0.0;
  std::vector<ClusterRecord> clusters;
  double generated = 0.0;
  long inserted = 0;
  double absorbed = 0.0;
  long queued = 0;
  double total_mass = 0.0;
};

inline StepRecord make_step_record(const Engine& e) {
  StepRecord r;
  r.step = e.step();
  r.time = e.time();
  const auto& net = e.network();
  for (const auto& c : e.clusters()) {
    ClusterRecord cr;
    cr.id = c.id;
    cr.representation = c.representation;
    cr.extent = c.extent_string();
    cr.vehicles = c.mass();
    double lane_length = 0.0;
    for (const auto& p : c.extent) lane_length += p.length() * net.road(p.road).lane_count;
    cr.density = lane_length > 0.0 ? cr.vehicles / lane_length : 0.0;
    cr.mean_speed = c.mean_speed();
    const auto f = e.flow(c.id);
    cr.inflow = f.inflow;
    cr.outflow = f.outflow;
    r.clusters.push_back(std::move(cr));
  }
  r.generated = e.ledger().generated;
  r.inserted = e.ledger().inserted;
  r.absorbed = e.ledger().absorbed;
  r.queued = e.queued();
  r.total_mass = e.total_mass();
  return r;
}

/// Decimal with 9 significant digits.
inline std::string fmt9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x == 0.0 ? 0.0 : x);
  return buf;
}

inline const char* kStepCsvHeader =
    "step,time,cluster,representation,extent,vehicles,density,mean_speed,inflow,outflow,"
    "generated,inserted,absorbed,queued,total_mass\n";

/// One row per cluster, then a totals row whose cluster column reads "total".
inline std::string step_csv_rows(const StepRecord& r) {
  std::string out;
  const std::string head = std::to_string(r.step) + "," + fmt9(r.time) + ",";
  double vehicles = 0.0;
  for (const auto& c : r.clusters) {
    vehicles += c.vehicles;
    out += head + std::to_string(c.id) + "," + to_string(c.representation) + "," + c.extent + "," + fmt9(c.vehicles) +
           "," + fmt9(c.density) + "," + fmt9(c.mean_speed) + "," + fmt9(c.inflow) + "," + fmt9(c.outflow) +
           ",,,,,\n";
  }
  out += head + "total,,," + fmt9(vehicles) + ",,,,," + fmt9(r.generated) + "," + std::to_string(r.inserted) + "," +
         fmt9(r.absorbed) + "," + std::to_string(r.queued) + "," + fmt9(r.total_mass) + "\n";
  return out;
}

inline std::string step_csv(const std::vector<StepRecord>& records) {
  std::string out = kStepCsvHeader;
  for (const auto& r : records) out += step_csv_rows(r);
  return out;
}

// Numbers go through the 9-digit text form so both formats carry the same values.
inline double round9(double x) { return std::stod(fmt9(x)); }

inline nlohmann::ordered_json step_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["time"] = round9(r.time);
  auto& cs = j["clusters"] = nlohmann::ordered_json::array();
  for (const auto& c : r.clusters) {
    nlohmann::ordered_json o;
    o["cluster"] = c.id;
    o["representation"] = to_string(c.representation);
    o["extent"] = c.extent;
    o["vehicles"] = round9(c.vehicles);
    o["density"] = round9(c.density);
    o["mean_speed"] = round9(c.mean_speed);
    o["inflow"] = round9(c.inflow);
    o["outflow"] = round9(c.outflow);
    cs.push_back(std::move(o));
  }
  j["generated"] = round9(r.generated);
  j["inserted"] = r.inserted;
  j["absorbed"] = round9(r.absorbed);
  j["queued"] = r.queued;
  j["total_mass"] = round9(r.total_mass);
  return j;
}

/// JSON Lines: one object per step.
inline std::string step_jsonl(const std::vector<StepRecord>& records) {
  std::string out;
  for (const auto& r : records) out += step_json(r).dump() + "\n";
  return out;
}

inline const char* kTransitionCsvHeader = "step,action,trigger,cluster,other,boundary,extent,pre_mass,post_mass\n";

inline std::string transition_csv_row(const TransitionRecord& t) {
  return std::to_string(t.step) + "," + to_string(t.kind) + "," + to_string(t.trigger) + "," + std::to_string(t.cluster) +
         "," + (t.other >= 0 ? std::to_string(t.other) : std::string()) + "," + t.boundary + "," + t.extent + "," +
         fmt9(t.pre_mass) + "," + fmt9(t.post_mass) + "\n";
}

inline std::string transitions_csv(const std::vector<TransitionRecord>& log) {
  std::string out = kTransitionCsvHeader;
  for (const auto& t : log) out += transition_csv_row(t);
  return out;
}

}  // namespace hytraffic
