#include <gtest/gtest.h>

#include <chrono>
#include <complex>
#include <sstream>

#include "droopguard/feeder.hpp"
#include "droopguard/rng.hpp"
#include "oracles.hpp"

using namespace droopguard;
using namespace droopguard::oracles;

namespace {

const char* kTwoBus = R"(
[slack]
0 1.0
[bus]
0 0 0
1 0.5 0.1
[line]
0 1 0.01 0.02
)";

FeederModel parse(const std::string& text) {
  std::istringstream in(text);
  return parse_feeder(in, "test");
}

}  // namespace

TEST(FeederParse, TwoBusFile) {
  auto m = load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/two_bus.feeder");
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(m.lines().size(), 1u);
  ASSERT_EQ(m.inverters().size(), 1u);
  EXPECT_EQ(m.inverters()[0].bus, 1u);
}

// The bundled reduction adds an ideal source ahead of the substation
// transformer, so 37 feeder nodes become 38 buses.
TEST(FeederParse, Ieee37Bundled) {
  auto m = load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder");
  EXPECT_EQ(m.size(), 38u);
  EXPECT_EQ(m.lines().size(), 37u);
  EXPECT_EQ(m.buses()[0].id, "SourceBus");
  EXPECT_GT(m.inverters().size(), 10u);
  for (const auto& inv : m.inverters()) EXPECT_GT(inv.capacity, 0.0);
}

TEST(FeederParse, CommentsAndSlackOrder) {
  auto m = parse("# header\n[bus]\n1 0.5 0.1 # load\n0 0 0\n[line]\n0 1 0.01 0.02\n[slack]\n0 1.02\n");
  EXPECT_EQ(m.buses()[0].id, "0");
  EXPECT_DOUBLE_EQ(m.slack_voltage(), 1.02);
}

TEST(FeederParse, DuplicateLineIsCycle) {
  const std::string text = std::string(kTwoBus) + "0 1 0.01 0.02\n";
  try {
    parse(text);
    FAIL();
  } catch (const TopologyError& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}

TEST(FeederParse, Errors) {
  // Bad number carries the line number.
  try {
    parse("[slack]\n0 1.0\n[bus]\n0 0 0\n1 abc 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
  EXPECT_THROW(parse("[busses]\n"), ParseError);
  EXPECT_THROW(parse("0 0 0\n"), ParseError);
  EXPECT_THROW(parse("[bus]\n0 0 0\n1 0 0\n[line]\n0 1 0.1 0.1\n"), ParseError);  // no slack
  EXPECT_THROW(parse("[slack]\n0 1\n[bus]\n0 0 0\n1 0 0\n2 0 0\n[line]\n0 1 0.1 0.1\n"), TopologyError);
  EXPECT_THROW(parse("[slack]\n0 1\n[bus]\n0 0 0\n1 0 0\n[line]\n0 9 0.1 0.1\n"), TopologyError);
  EXPECT_THROW(parse(std::string(kTwoBus) + "[inverter]\n7 0.1\n"), TopologyError);
  EXPECT_THROW(parse(std::string(kTwoBus) + "[inverter]\n1 0\n"), TopologyError);
  EXPECT_THROW(parse("[slack]\n0 1\n[bus]\n0 0 0\n1 0 0\n[line]\n0 1 -0.1 0.1\n"), TopologyError);
  EXPECT_THROW(parse("[slack]\n0 1\n[bus]\n0 0 0\n1 0 0\n[line]\n0 1 0 0\n"), TopologyError);
  EXPECT_THROW(load_feeder("/nonexistent/feeder.txt"), ParseError);
}

TEST(PowerFlow, TwoBusMatchesNewton) {
  auto m = parse(kTwoBus);
  auto s = base_load_injections(m);
  auto sol = solve_power_flow(m, s, 1.0, {1e-12, 100});
  auto ref = newton_solve(m, s, 1.0);
  EXPECT_NEAR(std::abs(sol.voltages[1]), std::abs(ref[1]), 1e-8);
  EXPECT_NEAR(std::arg(sol.voltages[1]), std::arg(ref[1]), 1e-8);
  EXPECT_EQ(sol.voltages[0], Complex(1.0, 0.0));
  EXPECT_LE(sol.residual, 1e-12);
}

TEST(PowerFlow, NoLoadIsFlat) {
  auto m = load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder");
  std::vector<Complex> s(m.size());
  auto sol = solve_power_flow(m, s, 1.03);
  EXPECT_EQ(sol.iterations, 1);
  for (const auto& v : sol.voltages) EXPECT_EQ(v, Complex(1.03, 0.0));
}

TEST(PowerFlow, Ieee37MatchesNewton) {
  auto m = load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder");
  auto s = base_load_injections(m);
  auto sol = solve_power_flow(m, s, m.slack_voltage());
  auto ref = newton_solve(m, s, m.slack_voltage());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_NEAR(std::abs(sol.voltages[i]), std::abs(ref[i]), 1e-6) << m.buses()[i].id;
  }
}

TEST(PowerFlow, RandomRadialFeedersMatchNewton) {
  Rng rng(derive_seed(7, "random-feeders"));
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    std::vector<Complex> s;
    auto m = random_feeder(rng, s);
    auto sol = solve_power_flow(m, s, 1.0, {1e-10, 200});
    auto ref = newton_solve(m, s, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      worst = std::max(worst, std::abs(std::abs(sol.voltages[i]) - std::abs(ref[i])));
    }
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 30.0);
}

TEST(PowerFlow, HeavierLoadLowersVoltage) {
  auto m = parse(kTwoBus);
  double last = 2.0;
  for (double p = 0.0; p <= 2.0; p += 0.1) {
    std::vector<Complex> s{{0, 0}, {-p, -0.1}};
    const double v = std::abs(solve_power_flow(m, s, 1.0).voltages[1]);
    EXPECT_LT(v, last);
    last = v;
  }
}

TEST(PowerFlow, Deterministic) {
  auto m = load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder");
  auto s = base_load_injections(m, 1.3);
  auto a = solve_power_flow(m, s, 1.05);
  auto b = solve_power_flow(m, s, 1.05);
  EXPECT_EQ(a.voltages, b.voltages);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(PowerFlow, NonConvergenceReportsResidual) {
  auto m = parse(kTwoBus);
  std::vector<Complex> s{{0, 0}, {-40.0, -10.0}};
  try {
    solve_power_flow(m, s, 1.0, {1e-8, 50});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
  EXPECT_THROW(solve_power_flow(m, s, 1.0, {0.0, 10}), std::invalid_argument);
}
