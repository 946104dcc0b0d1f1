#include <gtest/gtest.h>

#include <random>

#include "support/oracles.hpp"

using namespace hytraffic;

namespace {

const FundamentalDiagram kFd = FundamentalDiagram::triangular(25, 0.15, 0.5);

MacroCell cell(double rho, int lanes = 1, double dx = 100) {
  MacroCell c;
  c.rho = rho;
  c.lanes = lanes;
  c.dx = dx;
  return c;
}

MacroSegment segment(std::vector<double> rhos, int lanes = 1, double dx = 100) {
  MacroSegment s;
  s.fd = kFd;
  for (double r : rhos) s.cells.push_back(cell(r, lanes, dx));
  return s;
}

}  // namespace

TEST(FundamentalDiagram, DefaultsAreConsistent) {
  const FundamentalDiagram fd;
  EXPECT_NEAR(fd.w, 0.5 / (0.15 - 0.02), 1e-12);
  EXPECT_NEAR(fd.w, 3.846, 1e-3);
  EXPECT_DOUBLE_EQ(fd.rho_c(), 0.02);
  EXPECT_EQ(fd, kFd);
  EXPECT_TRUE(fd.invalid_field().empty());
}

TEST(FdFlow, EndpointsAreZero) {
  EXPECT_EQ(fd_flow(0.0, kFd), 0.0);
  EXPECT_NEAR(fd_flow(kFd.rho_jam, kFd), 0.0, 1e-15);
}

TEST(FdFlow, CongestedBranchMatchesScalarEvaluation) {
  EXPECT_NEAR(fd_flow(0.12, kFd), oracle::tri_flow(0.12, 25, 0.15, 0.5), 1e-12);
  EXPECT_NEAR(fd_flow(0.12, kFd), 0.11538, 1e-5);
}

TEST(FdFlow, PeaksAtCapacityAndIsContinuous) {
  EXPECT_NEAR(fd_flow(kFd.rho_c(), kFd), kFd.q_max, 1e-12);
  for (double eps : {1e-3, 1e-6, 1e-9})
    EXPECT_NEAR(fd_flow(kFd.rho_c() - eps, kFd), fd_flow(kFd.rho_c() + eps, kFd), 30 * eps);
}

TEST(FdFlow, OutOfRangeThrows) {
  EXPECT_THROW(fd_flow(-0.01, kFd), DensityOutOfRange);
  EXPECT_THROW(fd_flow(0.2, kFd), DensityOutOfRange);
}

TEST(DemandSupply, EmptyAndJammedCells) {
  EXPECT_EQ(demand(cell(0, 2), kFd), 0.0);
  EXPECT_DOUBLE_EQ(supply(cell(0, 2), kFd), 2 * kFd.q_max);
  EXPECT_DOUBLE_EQ(demand(cell(kFd.rho_jam, 2), kFd), 2 * kFd.q_max);
  EXPECT_NEAR(supply(cell(kFd.rho_jam, 2), kFd), 0.0, 1e-15);
}

TEST(DemandSupply, LightTrafficOnTwoLanes) {
  EXPECT_DOUBLE_EQ(demand(cell(0.01, 2), kFd), 2 * 25 * 0.01);
  EXPECT_DOUBLE_EQ(demand(cell(0.01, 2), kFd), 0.5);
}

TEST(DemandSupply, LocalLimitLowersCapacity) {
  auto c = cell(0.0, 1);
  c.v_cap = 10;
  const auto fd = cell_fd(c, kFd);
  EXPECT_DOUBLE_EQ(fd.v_f, 10);
  EXPECT_DOUBLE_EQ(fd.w, kFd.w);
  EXPECT_DOUBLE_EQ(fd.rho_jam, kFd.rho_jam);
  // Critical point sits on the unchanged congested branch.
  EXPECT_NEAR(fd.q_max, kFd.w * (kFd.rho_jam - fd.rho_c()), 1e-12);
  EXPECT_LT(supply(c, kFd), kFd.q_max);
}

TEST(CellMeanSpeed, Conventions) {
  EXPECT_EQ(cell_mean_speed(cell(0), kFd), kFd.v_f);
  EXPECT_EQ(cell_mean_speed(cell(0.01), kFd), kFd.v_f);
  EXPECT_EQ(cell_mean_speed(cell(kFd.rho_c()), kFd), kFd.v_f);
  EXPECT_NEAR(cell_mean_speed(cell(0.12), kFd), oracle::tri_flow(0.12, 25, 0.15, 0.5) / 0.12, 1e-12);
  EXPECT_NEAR(cell_mean_speed(cell(0.12), kFd), 0.9615, 1e-4);
}

TEST(CtmStep, EmptySegmentStaysEmpty) {
  auto s = segment({0, 0, 0});
  const auto before = s;
  const auto r = ctm_step(s, 0, 1e9, 1.0);
  EXPECT_EQ(s, before);
  EXPECT_EQ(r.outflow, 0);
  EXPECT_EQ(r.accepted_inflow, 0);
}

TEST(CtmStep, UniformRingIsStationary) {
  auto s = segment({0.01, 0.01, 0.01, 0.01}, 2);
  const auto before = s;
  for (int i = 0; i < 1000; ++i) {
    const double out = demand(s.cells.back(), s.fd);
    const double sup = supply(s.cells.front(), s.fd);
    ctm_step(s, out, sup, 2.0);
  }
  for (std::size_t i = 0; i < s.cells.size(); ++i) EXPECT_NEAR(s.cells[i].rho, before.cells[i].rho, 1e-15);
}

TEST(CtmStep, CflViolationThrows) {
  auto s = segment({0.01}, 1, 25);
  EXPECT_THROW(ctm_step(s, 0, 0, 1.5), CflViolation);
  EXPECT_NO_THROW(ctm_step(s, 0, 0, 1.0));
  EXPECT_DOUBLE_EQ(cfl_limit(s), 1.0);
}

TEST(CtmStep, MassChangesByNetBoundaryFlow) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> rho(0, 0.15), flow(0, 3), len(25, 200);
  std::uniform_int_distribution<int> lanes(1, 4), count(1, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    MacroSegment s;
    s.fd = kFd;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) s.cells.push_back(cell(rho(rng), lanes(rng), len(rng)));
    const double dt = cfl_limit(s);
    const double m0 = s.mass();
    const auto r = ctm_step(s, flow(rng), flow(rng), dt);
    EXPECT_NEAR(s.mass() - m0, dt * (r.accepted_inflow - r.outflow), 1e-9 * std::max(1.0, m0));
    for (const auto& c : s.cells) {
      EXPECT_GE(c.rho, -1e-12);
      EXPECT_LE(c.rho, kFd.rho_jam + 1e-12);
    }
  }
}

TEST(CtmStep, ShockTravelsAtRankineHugoniotSpeed) {
  // Short version of the acceptance run; the full one measures over 200 s.
  std::vector<double> rhos(200, 0.01);
  for (std::size_t i = 100; i < rhos.size(); ++i) rhos[i] = 0.12;
  auto s = segment(rhos, 1, 25);
  auto front = [&] {
    // Position where density crosses the midpoint between the two states.
    for (std::size_t i = 0; i < s.cells.size(); ++i)
      if (s.cells[i].rho > 0.065) return 25.0 * i;
    return 25.0 * s.cells.size();
  };
  const double x0 = front();
  const double duration = 100;
  for (int t = 0; t < duration; ++t) ctm_step(s, demand(s.cells.front(), s.fd), supply(s.cells.back(), s.fd), 1.0);
  const double speed = (front() - x0) / duration;
  const double rh = oracle::rankine_hugoniot(0.01, 0.12);
  EXPECT_NEAR(rh, -1.224, 1e-3);
  EXPECT_NEAR(speed, rh, 0.05 * std::abs(rh) + 25.0 / duration);
}
