#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "support/oracles.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = HYTRAFFIC_FIXTURES;

int cli(const std::string& args) {
  const std::string cmd = std::string(HYTRAFFIC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hytraffic_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, ZeroStepsWritesHeaderOnly) {
  const auto out = scratch("zero");
  ASSERT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --steps 0 --out " + quoted(out)), 0);
  const auto rows = lines(out / "steps.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0] + "\n", hytraffic::kStepCsvHeader);
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_FALSE(fs::exists(out / "steps.csv.tmp"));
}

TEST(Cli, OneRowPerClusterPlusTotalPerStep) {
  const auto out = scratch("rows");
  ASSERT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --steps 3 --out " + quoted(out)), 0);
  const auto rows = lines(out / "steps.csv");
  ASSERT_EQ(rows.size(), 1u + 3 * (3 + 1));
  const std::regex step_prefix("^([0-9]+),");
  std::map<int, int> per_step;
  int totals = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::smatch m;
    ASSERT_TRUE(std::regex_search(rows[i], m, step_prefix)) << rows[i];
    ++per_step[std::stoi(m[1])];
    if (rows[i].find(",total,") != std::string::npos) ++totals;
    EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 14) << rows[i];
  }
  EXPECT_EQ(per_step, (std::map<int, int>{{1, 4}, {2, 4}, {3, 4}}));
  EXPECT_EQ(totals, 3);
  const auto tr = lines(out / "transitions.csv");
  ASSERT_FALSE(tr.empty());
  EXPECT_EQ(tr[0] + "\n", hytraffic::kTransitionCsvHeader);
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const auto a = scratch("rep_a");
  const auto b = scratch("rep_b");
  const std::string common = "run --scenario " + quoted(kFixtures / "hybrid") + " --steps 400 --seed 42 --probes steps,transitions,trajectories,mass";
  ASSERT_EQ(cli(common + " --out " + quoted(a)), 0);
  ASSERT_EQ(cli(common + " --threads 3 --out " + quoted(b)), 0);
  for (const char* f : {"steps.csv", "transitions.csv", "trajectories.csv", "report.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, JsonFormatWritesJsonLines) {
  const auto out = scratch("json");
  ASSERT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --steps 5 --format json --out " + quoted(out)), 0);
  EXPECT_FALSE(fs::exists(out / "steps.csv"));
  const auto rows = lines(out / "steps.jsonl");
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto j = nlohmann::json::parse(rows[i]);
    EXPECT_EQ(j.at("step").get<long>(), static_cast<long>(i + 1));
    EXPECT_EQ(j.at("clusters").size(), 3u);
  }
}

TEST(Cli, ValidateAcceptsFixtures) {
  EXPECT_EQ(cli("validate --scenario " + quoted(kFixtures / "hybrid")), 0);
  EXPECT_EQ(cli("validate --scenario " + quoted(kFixtures / "navigation" / "scenario.xml")), 0);
}

TEST(Cli, UsageAndScenarioErrorsExitOne) {
  EXPECT_EQ(cli("run"), 1);
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("run --scenario /nonexistent/scenario.xml --out " + quoted(scratch("missing"))), 1);
  EXPECT_EQ(cli("validate --scenario /nonexistent"), 1);
  EXPECT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --lod bogus=1 --out " + quoted(scratch("lod"))), 1);
  EXPECT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --probes steps,nope --out " + quoted(scratch("probe"))), 1);
  EXPECT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --steps 3 --duration 4"), 1);
}

TEST(Cli, RuntimeErrorExitsTwoAndStillReports) {
  const auto dir = scratch("cfl_scenario");
  for (const auto& e : fs::directory_iterator(kFixtures / "hybrid")) fs::copy(e.path(), dir / e.path().filename());
  auto xml = slurp(dir / "scenario.xml");
  xml = std::regex_replace(xml, std::regex("time_step=\"0.5\""), "time_step=\"5\"");
  std::ofstream(dir / "scenario.xml") << xml;
  const auto out = scratch("cfl_out");
  EXPECT_EQ(cli("run --scenario " + quoted(dir) + " --out " + quoted(out)), 2);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_FALSE(report.at("error").is_null());
  EXPECT_EQ(lines(out / "steps.csv").size(), 1u);
}

TEST(Cli, LodOverrideDisablesTransitions) {
  const auto out = scratch("nolod");
  ASSERT_EQ(cli("run --scenario " + quoted(kFixtures / "hybrid") + " --duration 600 --lod enabled=false --out " + quoted(out)), 0);
  EXPECT_EQ(lines(out / "transitions.csv").size(), 1u);
}
