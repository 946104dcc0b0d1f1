#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace hytraffic;

namespace {

GeneratorSpec normal_source(const std::string& id, double q) {
  auto g = build::flow_source(id, "r1", {0}, q);
  g.population.params["v0"] = Distribution::normal(30, 4);
  g.population.params["T"] = Distribution::uniform(1.0, 2.0);
  return g;
}

std::vector<VehicleSpec> run(Generator& g, int steps, double dt, std::vector<int>* at = nullptr) {
  std::vector<VehicleSpec> all;
  double generated = 0.0;
  for (int k = 0; k < steps; ++k) {
    const auto out = g.generation_influences(k * dt, dt, generated);
    for (const auto& v : out) {
      all.push_back(v);
      if (at) at->push_back(k + 1);
    }
  }
  return all;
}

}  // namespace

TEST(Generator, ZeroFlowEmitsNothing) {
  Generator g(build::flow_source("in", "r1", {0, 1}, 0), 1);
  double generated = 0.0;
  for (int k = 0; k < 10000; ++k) EXPECT_TRUE(g.generation_influences(k * 0.25, 0.25, generated).empty());
  EXPECT_EQ(generated, 0.0);
  EXPECT_EQ(g.accumulated_mass(), 0.0);
}

TEST(Generator, DeterministicFlowEmitsEveryEighthStep) {
  // 1800 veh/h and 0.25 s steps put 0.125 vehicles into the accumulator per step.
  Generator g(build::flow_source("in", "r1", {0}, 1800), 1);
  std::vector<int> at;
  run(g, 80, 0.25, &at);
  ASSERT_EQ(at.size(), 10u);
  for (std::size_t i = 0; i < at.size(); ++i) EXPECT_EQ(at[i], 8 * static_cast<int>(i + 1));
}

TEST(Generator, EachLaneHasItsOwnAccumulator) {
  Generator g(build::flow_source("in", "r1", {0, 1, 2}, 1800), 1);
  double generated = 0.0;
  std::map<int, int> per_lane;
  for (int k = 0; k < 8; ++k)
    for (const auto& v : g.generation_influences(k * 0.25, 0.25, generated)) ++per_lane[v.lane];
  EXPECT_EQ(per_lane, (std::map<int, int>{{0, 1}, {1, 1}, {2, 1}}));
  EXPECT_DOUBLE_EQ(generated, 3.0);
}

TEST(Generator, GeneratedMassTracksAccumulators) {
  Generator g(build::flow_source("in", "r1", {0, 1}, 1000), 1);
  double generated = 0.0;
  std::size_t emitted = 0;
  for (int k = 0; k < 777; ++k) emitted += g.generation_influences(k * 0.3, 0.3, generated).size();
  EXPECT_NEAR(generated, emitted + g.accumulated_mass(), 1e-9);
  EXPECT_NEAR(generated, 2 * 1000 * 777 * 0.3 / 3600, 1e-9);
}

TEST(Generator, ScriptedEventsFallInHalfOpenWindow) {
  GeneratorSpec spec;
  spec.point = {"s", "r1", {0}, "out"};
  spec.rhythm.kind = Rhythm::Kind::Script;
  ScriptedEvent a, b, c;
  a.time = 1.0;
  b.time = 1.1;
  b.lane = 1;
  c.time = 1.25;
  spec.rhythm.events = {a, b, c};
  Generator g(spec, 3);
  double generated = 0.0;
  EXPECT_TRUE(g.generation_influences(0.75, 0.25, generated).empty());
  const auto out = g.generation_influences(1.0, 0.25, generated);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].lane, 0);
  EXPECT_EQ(out[1].lane, 1);
  EXPECT_EQ(g.generation_influences(1.25, 0.25, generated).size(), 1u);
  EXPECT_EQ(generated, 3.0);
}

TEST(Generator, FlowProfileIsPiecewiseConstant) {
  Rhythm r;
  r.profile = {{0, 600}, {100, 1200}, {200, 0}};
  EXPECT_EQ(r.flow_at(0), 600);
  EXPECT_EQ(r.flow_at(99.9), 600);
  EXPECT_EQ(r.flow_at(100), 1200);
  EXPECT_EQ(r.flow_at(500), 0);
}

TEST(Generator, StreamsDependOnlyOnSeedAndId) {
  Generator alone(normal_source("a", 1200), 9);
  const auto ref = run(alone, 2000, 0.5);

  // Interleaving another source must not perturb the samples of "a".
  Generator a(normal_source("a", 1200), 9);
  Generator b(normal_source("b", 3000), 9);
  double ga = 0, gb = 0;
  std::vector<VehicleSpec> got;
  for (int k = 0; k < 2000; ++k) {
    b.generation_influences(k * 0.5, 0.5, gb);
    for (const auto& v : a.generation_influences(k * 0.5, 0.5, ga)) got.push_back(v);
  }
  ASSERT_EQ(got.size(), ref.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].params, ref[i].params);

  EXPECT_NE(stream_seed(9, "generator/a"), stream_seed(9, "generator/b"));
  EXPECT_NE(stream_seed(9, "generator/a"), stream_seed(10, "generator/a"));
  EXPECT_EQ(stream_seed(9, "generator/a"), stream_seed(9, "generator/a"));
}

TEST(Distribution, NormalIsTruncatedAtThreeSigmaAndPositive) {
  Rng rng(5);
  const auto d = Distribution::normal(2, 1.5);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = d.sample(rng);
    EXPECT_GT(x, 0.0);
    EXPECT_LE(std::abs(x - 2), 4.5);
    sum += x;
  }
  EXPECT_GT(sum / 100000, 2.0);  // truncating the low tail lifts the mean
}

TEST(Distribution, UniformStaysInRange) {
  Rng rng(6);
  const auto d = Distribution::uniform(1.0, 2.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = d.sample(rng);
    EXPECT_GE(x, 1.0);
    EXPECT_LT(x, 2.0);
  }
  EXPECT_EQ(Distribution::constant(3.5).sample(rng), 3.5);
}

TEST(Population, SamplesAreClampedToValidParameters) {
  Population p;
  p.params["v0"] = Distribution::uniform(-5, 0);
  p.params["p"] = Distribution::constant(3);
  p.params["delta"] = Distribution::constant(0.2);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto d = p.sample(rng);
    EXPECT_GT(d.v0, 0.0);
    EXPECT_EQ(d.p, 1.0);
    EXPECT_EQ(d.delta, 1.0);
  }
}

TEST(Generator, InsertionSpeedNeverExceedsDesiredSpeed) {
  auto spec = normal_source("a", 3600);
  spec.population.insertion_speed = 40;
  Generator g(spec, 2);
  for (const auto& v : run(g, 400, 0.5)) EXPECT_LE(v.speed, v.params.v0);
}

TEST(Generator, PoissonRateMatchesOnAverage) {
  auto spec = build::flow_source("in", "r1", {0}, 1800);
  spec.rhythm.poisson = true;
  Generator g(spec, 11);
  const auto all = run(g, 3600 * 4, 0.25);
  // One hour at 1800 veh/h; the count is Poisson with sd about 42.
  EXPECT_NEAR(static_cast<double>(all.size()), 1800.0, 5 * std::sqrt(1800.0));
}
