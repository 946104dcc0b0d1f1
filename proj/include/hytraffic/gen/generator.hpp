/// @file generator.hpp
/// @brief Vehicle sources: flow-mass and scripted traffic input points.
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "../micro/vehicle.hpp"
#include "../network/network.hpp"

namespace hytraffic {

using Rng = std::mt19937_64;

/// Stable 64-bit seed for the stream named `name` under `global_seed`.
inline std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = global_seed ^ h;  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Distribution {
  enum class Kind { Constant, Uniform, Normal };
  Kind kind = Kind::Constant;
  double a = 0.0;  ///< value | low | mean
  double b = 0.0;  ///< unused | high | standard deviation

  static Distribution constant(double v) { return {Kind::Constant, v, 0.0}; }
  static Distribution uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
  static Distribution normal(double mean, double sd) { return {Kind::Normal, mean, sd}; }

  /// Normal draws are truncated at +-3 sd and to positive values by resampling.
  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::Constant: return a;
      case Kind::Uniform: return std::uniform_real_distribution<double>(a, b)(rng);
      case Kind::Normal: {
        if (b <= 0.0) return a;
        std::normal_distribution<double> n(a, b);
        for (int i = 0; i < 64; ++i) {
          const double x = n(rng);
          if (std::abs(x - a) <= 3.0 * b && x > 0.0) return x;
        }
        return a;
      }
    }
    return a;
  }
  bool operator==(const Distribution&) const = default;
};

/// Driver and vehicle mix drawn for each created vehicle.
struct Population {
  std::map<std::string, Distribution> params;  ///< keyed by DriverParams field name
  double length = 4.0;
  double insertion_speed = 25.0;  ///< capped by the local speed limit and the driver's v0

  static const std::vector<std::string>& field_names() {
    static const std::vector<std::string> names{"v0", "T", "a_max", "b", "delta", "s0", "p", "da_th", "b_safe"};
    return names;
  }

  /// Samples fields in a fixed order; results are clamped into the valid range.
  DriverParams sample(Rng& rng) const {
    DriverParams p;
    auto field = [&p](const std::string& n) -> double& {
      if (n == "v0") return p.v0;
      if (n == "T") return p.T;
      if (n == "a_max") return p.a_max;
      if (n == "b") return p.b;
      if (n == "delta") return p.delta;
      if (n == "s0") return p.s0;
      if (n == "p") return p.p;
      if (n == "da_th") return p.da_th;
      return p.b_safe;
    };
    for (const auto& name : field_names())
      if (auto it = params.find(name); it != params.end()) field(name) = it->second.sample(rng);
    constexpr double tiny = 1e-3;
    for (double* x : {&p.v0, &p.T, &p.a_max, &p.b, &p.s0, &p.b_safe}) *x = std::max(*x, tiny);
    p.delta = std::max(p.delta, 1.0);
    p.p = std::clamp(p.p, 0.0, 1.0);
    p.da_th = std::max(p.da_th, 0.0);
    return p;
  }
  bool operator==(const Population&) const = default;
};

struct FlowSegment {
  double start = 0.0;  ///< [s]
  double flow = 0.0;   ///< [veh/h per lane]
  bool operator==(const FlowSegment&) const = default;
};

/// Fully specified vehicle released at a given time.
struct ScriptedEvent {
  double time = 0.0;
  int lane = 0;
  double speed = 0.0;
  double length = 4.0;
  DriverParams params{};
  bool operator==(const ScriptedEvent&) const = default;
};

struct Rhythm {
  enum class Kind { Flow, Script };
  Kind kind = Kind::Flow;
  std::vector<FlowSegment> profile;  ///< piecewise-constant, sorted by start
  std::vector<ScriptedEvent> events; ///< sorted by time
  bool poisson = false;

  /// Flow in force at time `t` [veh/h per lane].
  double flow_at(double t) const {
    double q = 0.0;
    for (const auto& s : profile) {
      if (s.start > t) break;
      q = s.flow;
    }
    return q;
  }
  bool operator==(const Rhythm&) const = default;
};

struct GeneratorSpec {
  InputPoint point;
  Population population;
  Rhythm rhythm;
  std::string generation_file;  ///< relative paths, kept for re-serialization
  std::string rhythm_file;
  bool operator==(const GeneratorSpec&) const = default;
};

/// A vehicle to be created at the input point, before identity and route are assigned.
struct VehicleSpec {
  int lane = 0;
  double speed = 0.0;
  double length = 4.0;
  DriverParams params{};
};

/// Runtime state of one input point.
class Generator {
public:
  Generator(GeneratorSpec spec, std::uint64_t global_seed)
      : m_spec(std::move(spec)), m_rng(stream_seed(global_seed, "generator/" + m_spec.point.id)) {
    for (int l : m_spec.point.lanes) m_accumulator[l] = 0.0;
  }

  const GeneratorSpec& spec() const { return m_spec; }
  const std::map<int, double>& accumulators() const { return m_accumulator; }

  /// Vehicles emitted during [t, t+dt); `generated` receives the mass entering the
  /// accumulators (fractional for flow-mass sources).
  std::vector<VehicleSpec> generation_influences(double t, double dt, double& generated) {
    std::vector<VehicleSpec> out;
    const auto& rh = m_spec.rhythm;
    if (rh.kind == Rhythm::Kind::Flow) {
      const double q = rh.flow_at(t);
      for (auto& [lane, acc] : m_accumulator) {
        const double expected = q * dt / 3600.0;
        if (rh.poisson) {
          const auto n = expected > 0 ? std::poisson_distribution<int>(expected)(m_rng) : 0;
          generated += n;
          for (int i = 0; i < n; ++i) out.push_back(draw(lane));
        } else {
          acc += expected;
          generated += expected;
          while (acc >= 1.0) {
            acc -= 1.0;
            out.push_back(draw(lane));
          }
        }
      }
    } else {
      const double end = t + dt;
      while (m_cursor < rh.events.size() && rh.events[m_cursor].time < end) {
        const auto& ev = rh.events[m_cursor++];
        if (ev.time < t - 1e-12) continue;  // before the run window
        generated += 1.0;
        out.push_back(VehicleSpec{ev.lane, ev.speed, ev.length, ev.params});
      }
    }
    return out;
  }

  /// Mass held in the fractional accumulators.
  double accumulated_mass() const {
    double m = 0.0;
    for (const auto& [_, a] : m_accumulator) m += a;
    return m;
  }

  /// Vehicles created but not yet inserted, FIFO.
  std::deque<Vehicle> queue;
  /// Mass waiting to enter a macroscopic cluster at the input point.
  double macro_backlog = 0.0;

  /// Fresh vehicle for `lane`, drawn from the generator's own stream.
  VehicleSpec draw(int lane) {
    VehicleSpec v;
    v.lane = lane;
    v.params = m_spec.population.sample(m_rng);
    v.speed = std::min(m_spec.population.insertion_speed, v.params.v0);
    v.length = m_spec.population.length;
    return v;
  }

private:

  GeneratorSpec m_spec;
  Rng m_rng;
  std::map<int, double> m_accumulator;
  std::size_t m_cursor = 0;
};

}  // namespace hytraffic
