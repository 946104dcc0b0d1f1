/// @file probe.hpp
/// @brief Observers notified by the engine at consistent instants only.
#pragma once

#include <exception>
#include <string>

namespace hytraffic {

class Engine;

/// Probes receive a read-only engine view. They never decide when to observe: the
/// engine calls them after initialization, after every step, at the end of the run and
/// once when the run stops on an error.
class Probe {
public:
  virtual ~Probe() = default;
  virtual std::string name() const { return "probe"; }
  virtual void on_simulation_start(const Engine&) {}
  virtual void on_initialized(const Engine&) {}
  virtual void on_step_end(const Engine&) {}
  virtual void on_final(const Engine&) {}
  virtual void on_error(const Engine&, const std::exception&) {}
};

enum class ProbeEvent { SimulationStart, Initialized, StepEnd, Final, Error };

inline const char* to_string(ProbeEvent e) {
  switch (e) {
    case ProbeEvent::SimulationStart: return "on_simulation_start";
    case ProbeEvent::Initialized: return "on_initialized";
    case ProbeEvent::StepEnd: return "on_step_end";
    case ProbeEvent::Final: return "on_final";
    case ProbeEvent::Error: return "on_error";
  }
  return "?";
}

/// A probe callback that threw; the run goes on and the failure ends up in the report.
struct ProbeFailure {
  std::string probe;
  ProbeEvent event = ProbeEvent::StepEnd;
  long step = 0;
  std::string message;
};

}  // namespace hytraffic
