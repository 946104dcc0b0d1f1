// Command-line front end: validate a scenario or run it and export the probe outputs.
//
//   hytraffic run --scenario <path> [--steps N | --duration S] [--seed U64] [--out DIR]
//                 [--format csv|json] [--lod key=value,...] [--probes list] [--threads N]
//   hytraffic validate --scenario <path>
//
// Exit codes: 0 success, 1 scenario or usage error, 2 runtime simulation error.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hytraffic/hytraffic.hpp"

namespace {

using namespace hytraffic;

constexpr int kOk = 0;
constexpr int kScenarioError = 1;
constexpr int kRuntimeError = 2;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, sep))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw CLI::ValidationError("--lod", key + ": '" + v + "' is not a number");
  return x;
}

void apply_lod_overrides(LodPolicy& p, const std::string& spec) {
  for (const auto& item : split(spec, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--lod", "expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "enabled") {
      if (val != "true" && val != "false") throw CLI::ValidationError("--lod", "enabled: expected true or false");
      p.enabled = val == "true";
    } else if (key == "theta_down") p.theta_down = parse_double(key, val);
    else if (key == "theta_up") p.theta_up = parse_double(key, val);
    else if (key == "persistence") p.persistence = static_cast<int>(parse_double(key, val));
    else if (key == "min_cluster_length") p.min_cluster_length = parse_double(key, val);
    else if (key == "micro_vehicle_budget") p.micro_vehicle_budget = static_cast<long>(parse_double(key, val));
    else if (key == "cooldown") p.cooldown = static_cast<long>(parse_double(key, val));
    else if (key == "wall_clock_budget") p.wall_clock_budget = parse_double(key, val);
    else throw CLI::ValidationError("--lod", "unknown policy key '" + key + "'");
  }
  if (auto f = p.invalid_field(); !f.empty()) throw CLI::ValidationError("--lod", "invalid value for " + f);
}

nlohmann::ordered_json report_json(const ScenarioModel& m, const EngineConfig& cfg, const RunReport& r,
                                   const Engine& e) {
  nlohmann::ordered_json j;
  j["scenario"] = m.name;
  j["seed"] = cfg.seed;
  j["steps"] = r.steps;
  j["time"] = round9(e.time());
  j["generated"] = round9(r.ledger.generated);
  j["inserted"] = r.ledger.inserted;
  j["absorbed"] = round9(r.ledger.absorbed);
  j["released"] = r.ledger.released;
  j["transitions"] = r.transitions;
  j["total_mass"] = round9(e.initialized() ? e.total_mass() : 0.0);
  auto& pf = j["probe_failures"] = nlohmann::ordered_json::array();
  for (const auto& f : r.probe_failures)
    pf.push_back({{"probe", f.probe}, {"event", to_string(f.event)}, {"step", f.step}, {"message", f.message}});
  j["error"] = r.error ? nlohmann::ordered_json(*r.error) : nlohmann::ordered_json(nullptr);
  return j;
}

struct RunOptions {
  std::string scenario;
  long steps = -1;
  double duration = -1.0;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string format = "csv";
  std::string lod;
  std::string probes = "steps,transitions,mass";
  unsigned threads = 1;
};

int run_command(const RunOptions& o) {
  ScenarioModel model;
  try {
    model = parse_scenario(o.scenario);
    if (!o.lod.empty()) apply_lod_overrides(model.lod, o.lod);
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kScenarioError;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kScenarioError;
  }

  EngineConfig cfg;
  cfg.seed = o.seed;
  cfg.threads = std::max(1u, o.threads);
  if (o.steps >= 0) cfg.steps = o.steps;
  else if (o.duration >= 0.0) cfg.steps = static_cast<long>(std::floor(o.duration / model.time_step + 1e-9));

  const std::filesystem::path out(o.out);
  const auto format = o.format == "json" ? OutputFormat::Json : OutputFormat::Csv;
  std::vector<std::unique_ptr<Probe>> probes;
  for (const auto& p : split(o.probes, ',')) {
    if (p == "steps") probes.push_back(std::make_unique<StepWriter>(out, format));
    else if (p == "transitions") probes.push_back(std::make_unique<TransitionWriter>(out));
    else if (p == "trajectories") probes.push_back(std::make_unique<TrajectoryWriter>(out));
    else if (p == "mass") probes.push_back(std::make_unique<MassAuditor>(out));
    else {
      std::cerr << "error: unknown probe '" << p << "' (steps, transitions, trajectories, mass)\n";
      return kScenarioError;
    }
  }

  Engine engine(model, cfg);
  for (auto& p : probes) engine.add_probe(*p);
  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  RunReport report;
  try {
    report = engine.run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    report = engine.report();
    code = kRuntimeError;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(out / "report.json", report_json(model, cfg, report, engine).dump(2) + "\n");
  for (const auto& f : report.probe_failures)
    std::cerr << "warning: probe " << f.probe << " failed in " << to_string(f.event) << " at step " << f.step << ": "
              << f.message << "\n";

  std::printf("steps=%ld inserted=%ld absorbed=%.9g transitions=%zu wall=%.3fs\n", report.steps,
              report.ledger.inserted, report.ledger.absorbed, report.transitions, wall);
  return code;
}

int validate_command(const std::string& scenario) {
  try {
    const auto m = parse_scenario(scenario);
    std::printf("%s: %zu roads, %zu nodes, %zu generators, valid\n", m.name.c_str(), m.network.roads().size(),
                m.network.nodes().size(), m.generators.size());
    return kOk;
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kScenarioError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid micro/macro road-traffic simulator"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario and write probe outputs");
  run_cmd->add_option("--scenario", run.scenario, "Scenario main file or directory")->required();
  auto* steps = run_cmd->add_option("--steps", run.steps, "Number of steps")->check(CLI::NonNegativeNumber);
  auto* duration = run_cmd->add_option("--duration", run.duration, "Simulated seconds")->check(CLI::NonNegativeNumber);
  steps->excludes(duration);
  run_cmd->add_option("--seed", run.seed, "Global random seed");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_option("--format", run.format, "Step record format")->check(CLI::IsMember({"csv", "json"}));
  run_cmd->add_option("--lod", run.lod, "Policy overrides, key=value,...");
  run_cmd->add_option("--probes", run.probes, "steps,transitions,trajectories,mass");
  run_cmd->add_option("--threads", run.threads, "Workers for per-vehicle phases")->check(CLI::PositiveNumber);

  std::string validate_scenario;
  auto* val_cmd = app.add_subcommand("validate", "Parse and validate a scenario");
  val_cmd->add_option("--scenario", validate_scenario, "Scenario main file or directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kScenarioError;
  }
  if (*run_cmd) return run_command(run);
  return validate_command(validate_scenario);
}
