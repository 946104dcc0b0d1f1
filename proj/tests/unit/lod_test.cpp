#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace hytraffic;

namespace {

LodPolicy policy(int K = 10, double min_len = 200) {
  LodPolicy p;
  p.persistence = K;
  p.min_cluster_length = min_len;
  return p;
}

PlanContext context(const RoadNetwork& net) {
  PlanContext ctx;
  ctx.network = &net;
  return ctx;
}

double total_mass(const std::vector<Cluster>& cs) {
  double m = 0.0;
  for (const auto& c : cs) m += c.mass();
  return m;
}

}  // namespace

TEST(LodPolicy, DefaultsAreValid) {
  const LodPolicy p;
  EXPECT_TRUE(p.invalid_field().empty());
  EXPECT_EQ(p.theta_down, 0.5);
  EXPECT_EQ(p.theta_up, 0.8);
  EXPECT_EQ(p.persistence, 10);
  EXPECT_EQ(p.min_cluster_length, 200);
  EXPECT_EQ(p.cooldown, 50);
  LodPolicy bad;
  bad.theta_up = 0.4;
  EXPECT_EQ(bad.invalid_field(), "theta_down");
}

TEST(DetectJam, FreeFlowNeverFlags) {
  const auto net = build::chain({1000}, 2);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.02);
  for (int step = 0; step < 100; ++step)
    for (bool f : detect_jam(c, policy())) EXPECT_FALSE(f);
}

TEST(DetectJam, HeldJamFlagsExactlyAtK) {
  const auto net = build::chain({1000}, 1);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.0);
  c.macro.cells[3].rho = 0.12;
  const double ratio = oracle::tri_flow(0.12, 25, 0.15, 0.5) / 0.12 / 25;
  EXPECT_NEAR(ratio, 0.0385, 1e-4);
  EXPECT_NEAR(speed_ratio(c.macro.cells[3], c.macro.fd), ratio, 1e-12);
  const int K = 7;
  for (int step = 1; step <= K + 3; ++step) {
    const auto flags = detect_jam(c, policy(K));
    EXPECT_EQ(flags[3], step >= K) << step;
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (i != 3) EXPECT_FALSE(flags[i]);
  }
}

TEST(DetectJam, OscillationNeverFlags) {
  const auto net = build::chain({500}, 1);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 500}}, 0.0);
  for (int step = 0; step < 200; ++step) {
    c.macro.cells[2].rho = step % 2 ? 0.12 : 0.01;
    for (bool f : detect_jam(c, policy(2))) EXPECT_FALSE(f);
  }
}

TEST(SplitCluster, EmptyMacroInHalves) {
  const auto net = build::chain({1000}, 2);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.0);
  const auto [a, b] = split_cluster(c, 500, policy(), 2);
  EXPECT_EQ(a.length(), 500);
  EXPECT_EQ(b.length(), 500);
  EXPECT_EQ(a.id, 1);
  EXPECT_EQ(b.id, 2);
  EXPECT_EQ(a.macro.cells.size(), 5u);
  EXPECT_EQ(b.macro.cells.size(), 5u);
  for (const auto* part : {&a, &b})
    for (const auto& cell : part->macro.cells) EXPECT_EQ(cell.rho, 0.0);
}

TEST(SplitCluster, MicroVehiclesPartitionByPosition) {
  std::vector<Vehicle> vs;
  for (int k = 0; k < 10; ++k) vs.push_back(build::vehicle(k + 1, "r1", 0, 50.0 + 100.0 * k, 10));
  auto c = build::micro_cluster(1, {{"r1", 0, 1000}}, vs);
  const auto [a, b] = split_cluster(c, 420, policy(), 2);
  EXPECT_EQ(a.vehicles.size(), 4u);
  EXPECT_EQ(b.vehicles.size(), 6u);
  EXPECT_EQ(a.extent, (std::vector<ExtentPiece>{{"r1", 0, 420}}));
  EXPECT_EQ(b.extent, (std::vector<ExtentPiece>{{"r1", 420, 1000}}));
}

TEST(SplitCluster, TooSmallPartThrows) {
  auto c = build::micro_cluster(1, {{"r1", 0, 1000}});
  EXPECT_THROW(split_cluster(c, 150, policy(), 2), TooSmall);
  EXPECT_THROW(split_cluster(c, 900, policy(), 2), TooSmall);
  EXPECT_NO_THROW(split_cluster(c, 200, policy(), 2));
}

TEST(SplitCluster, MacroSplitMustFollowCellEdges) {
  const auto net = build::chain({1000}, 2);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.03);
  EXPECT_THROW(split_cluster(c, 450, policy(), 2), TooSmall);
}

TEST(SplitCluster, SpansRoadBoundaries) {
  const auto net = build::chain({300, 300}, 1);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 300}, {"r2", 0, 300}}, 0.04);
  const auto [a, b] = split_cluster(c, 400, policy(), 2);
  EXPECT_EQ(a.extent, (std::vector<ExtentPiece>{{"r1", 0, 300}, {"r2", 0, 100}}));
  EXPECT_EQ(b.extent, (std::vector<ExtentPiece>{{"r2", 100, 300}}));
  EXPECT_NEAR(a.mass() + b.mass(), c.mass(), 1e-12);
}

TEST(MergeClusters, UndoesASplit) {
  const auto net = build::chain({1000}, 2);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.0);
  for (std::size_t i = 0; i < c.macro.cells.size(); ++i) c.macro.cells[i].rho = 0.01 * static_cast<double>(i);
  c.residual = 0.25;
  const auto [a, b] = split_cluster(c, 600, policy(), 2);
  const auto m = merge_clusters(a, b, net);
  EXPECT_EQ(m.extent, c.extent);
  EXPECT_EQ(m.macro.cells, c.macro.cells);
  EXPECT_DOUBLE_EQ(m.mass(), c.mass());
}

TEST(MergeClusters, MicroUnionKeepsOrder) {
  const auto net = build::chain({1000}, 1);
  auto a = build::micro_cluster(1, {{"r1", 0, 500}}, {build::vehicle(1, "r1", 0, 100, 5), build::vehicle(2, "r1", 0, 300, 5)});
  auto b = build::micro_cluster(2, {{"r1", 500, 1000}}, {build::vehicle(3, "r1", 0, 700, 5)});
  const auto m = merge_clusters(a, b, net);
  ASSERT_EQ(m.vehicles.size(), 3u);
  for (std::size_t k = 1; k < m.vehicles.size(); ++k) EXPECT_LT(m.vehicles[k - 1].position, m.vehicles[k].position);
  EXPECT_EQ(m.extent, (std::vector<ExtentPiece>{{"r1", 0, 1000}}));
}

TEST(MergeClusters, RejectsNonAdjacentAndMixedRepresentations) {
  const auto net = build::chain({1000}, 1);
  auto a = build::micro_cluster(1, {{"r1", 0, 300}});
  auto far = build::micro_cluster(2, {{"r1", 600, 1000}});
  EXPECT_THROW(merge_clusters(a, far, net), NotAdjacent);
  auto macro = build::macro_cluster(3, net, {{"r1", 300, 600}}, 0.0);
  EXPECT_THROW(merge_clusters(a, macro, net), RepresentationMismatch);
}

TEST(MergeClusters, InterfaceStateJoinsTheMergedCluster) {
  const auto net = build::chain({1000}, 1);
  Population pop;
  Rng rng(1);
  VehicleId next = 10;
  VehicleFactory f{&pop, &rng, &next};
  auto a = build::micro_cluster(1, {{"r1", 0, 500}}, {build::vehicle(1, "r1", 0, 100, 5)});
  auto b = build::micro_cluster(2, {{"r1", 500, 1000}}, {build::vehicle(2, "r1", 0, 503, 5)});
  BoundaryInterface shared;
  shared.road = "r1";
  shared.position = 500;
  shared.upstream = 1;
  shared.downstream = 2;
  shared.carryover = {0.375};
  shared.pending.push_back(f.make("r1", 0, 500, 5));  // no room: vehicle 2 sits right ahead
  const double before = a.mass() + b.mass() + shared.mass();
  const auto m = merge_clusters(a, b, net, &shared);
  EXPECT_DOUBLE_EQ(m.mass(), before);
  EXPECT_DOUBLE_EQ(shared.mass(), 0.0);
  EXPECT_EQ(m.vehicles.size(), 2u);
  EXPECT_DOUBLE_EQ(m.residual, 1.375);
}

TEST(JamLocalization, HalvingConvergesOnTheBottleneck) {
  const auto net = build::chain({1600}, 1);
  auto c = build::macro_cluster(1, net, {{"r1", 0, 1600}}, 0.01);
  const std::size_t bottleneck = 11;  // [1100, 1200)
  c.macro.cells[bottleneck].rho = 0.14;
  const auto p = policy(1);
  (void)detect_jam(c, p);
  ClusterId next = 2;
  int splits = 0;
  while (c.length() >= 2 * p.min_cluster_length - 1e-9) {
    auto [a, b] = split_cluster(c, c.length() / 2, p, next++);
    ++splits;
    const auto fa = jam_flags(a, p);
    c = std::find(fa.begin(), fa.end(), true) != fa.end() ? a : b;
  }
  EXPECT_EQ(splits, 3);
  EXPECT_LE(c.length(), p.min_cluster_length);
  EXPECT_TRUE(c.contains("r1", 1150));
}

// ---------------------------------------------------------------------------
// Planning.

TEST(PlanTransitions, SteadyFreeFlowIsEmpty) {
  const auto net = build::chain({1000, 1000}, 2);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.01),
                          build::micro_cluster(2, {{"r2", 0, 1000}})};
  // Different roots never merge, and nothing is jammed or over budget.
  for (int step = 0; step < 30; ++step) {
    for (auto& c : cs) update_activity(c, net, policy(), step);
    EXPECT_TRUE(plan_transitions(cs, policy(), step, 3, context(net)).empty()) << step;
  }
}

TEST(PlanTransitions, JammedCellIsCutOutAndRefined) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.01)};
  cs[0].macro.cells[5].rho = 0.13;
  const auto p = policy(3);
  std::vector<Action> plan;
  for (int step = 0; step < 3; ++step) {
    update_activity(cs[0], net, p, step);
    plan = plan_transitions(cs, p, step, 2, context(net));
    if (step < 2) EXPECT_TRUE(plan.empty());
  }
  // Flagged cell [500,600) padded by one cell each side: [400,700).
  const std::vector<Action> expected{
      {ActionKind::Split, Trigger::Jam, 1, 2, 400},
      {ActionKind::Split, Trigger::Jam, 2, 3, 300},
      {ActionKind::Refine, Trigger::Jam, 2, -1, 0},
  };
  EXPECT_EQ(plan, expected);
}

TEST(PlanTransitions, JamNearTheEndNeedsOneSplit) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.01)};
  cs[0].macro.cells[9].rho = 0.13;
  const auto p = policy(1);
  update_activity(cs[0], net, p, 0);
  const auto plan = plan_transitions(cs, p, 0, 2, context(net));
  const std::vector<Action> expected{
      {ActionKind::Split, Trigger::Jam, 1, 2, 800},
      {ActionKind::Refine, Trigger::Jam, 2, -1, 0},
  };
  EXPECT_EQ(plan, expected);
}

TEST(PlanTransitions, CooldownSuppressesRefinement) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.13)};
  const auto p = policy(1);
  cs[0].last_switch = 10;
  update_activity(cs[0], net, p, 20);
  EXPECT_TRUE(plan_transitions(cs, p, 20, 2, context(net)).empty());
  EXPECT_FALSE(plan_transitions(cs, p, 10 + p.cooldown, 2, context(net)).empty());
}

TEST(PlanTransitions, ZeroBudgetCoarsensEveryEligibleMicroCluster) {
  const auto net = build::chain({500, 500, 500}, 1);
  std::vector<Cluster> cs{
      build::micro_cluster(1, {{"r1", 0, 500}}, {build::vehicle(1, "r1", 0, 100, 20)}),
      build::micro_cluster(2, {{"r2", 0, 500}}, {build::vehicle(2, "r2", 0, 100, 20)}),
      build::micro_cluster(3, {{"r3", 0, 500}}, {build::vehicle(3, "r3", 0, 100, 20)}),
  };
  cs[1].last_switch = 95;  // still cooling down
  cs[0].last_jam = 50;
  auto p = policy();
  p.micro_vehicle_budget = 0;
  const auto plan = plan_transitions(cs, p, 100, 4, context(net));
  const std::vector<Action> expected{
      {ActionKind::Coarsen, Trigger::Budget, 3, -1, 0},
      {ActionKind::Coarsen, Trigger::Budget, 1, -1, 0},
  };
  EXPECT_EQ(plan, expected);
}

TEST(PlanTransitions, RecoveredRefinedClusterCoarsens) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::micro_cluster(1, {{"r1", 0, 1000}}, {build::vehicle(1, "r1", 0, 100, 30)})};
  cs[0].refined = true;
  cs[0].last_switch = 0;
  const auto p = policy(5);
  std::vector<Action> plan;
  for (long step = 1; step <= 60; ++step) {
    update_activity(cs[0], net, p, step);
    plan = plan_transitions(cs, p, step, 2, context(net));
    if (step < p.cooldown) EXPECT_TRUE(plan.empty()) << step;
  }
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0], (Action{ActionKind::Coarsen, Trigger::Recovery, 1, -1, 0}));
}

TEST(PlanTransitions, SettledSiblingsMerge) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 500}}, 0.01),
                          build::macro_cluster(2, net, {{"r1", 500, 1000}}, 0.01)};
  cs[1].root = 1;
  const auto p = policy(2);
  std::vector<Action> plan;
  for (long step = 0; step < 2; ++step) {
    for (auto& c : cs) update_activity(c, net, p, step);
    plan = plan_transitions(cs, p, step, 3, context(net));
  }
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0], (Action{ActionKind::Merge, Trigger::Recovery, 1, 2, 0}));
  auto ctx = context(net);
  ctx.boundary_empty = [](ClusterId, ClusterId) { return false; };
  EXPECT_TRUE(plan_transitions(cs, p, 2, 3, ctx).empty());
  EXPECT_NEAR(total_mass(cs), 10.0, 1e-12);
}

TEST(PlanTransitions, DisabledPolicyPlansNothing) {
  const auto net = build::chain({1000}, 1);
  std::vector<Cluster> cs{build::macro_cluster(1, net, {{"r1", 0, 1000}}, 0.13)};
  auto p = policy(1);
  update_activity(cs[0], net, p, 0);
  p.enabled = false;
  EXPECT_TRUE(plan_transitions(cs, p, 0, 2, context(net)).empty());
}
