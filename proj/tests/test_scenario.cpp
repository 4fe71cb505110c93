#include <gtest/gtest.h>

#include <algorithm>

#include "droopguard/scenario.hpp"
#include "support.hpp"

using namespace droopguard;

namespace {

EpisodeScenario make(const ScenarioConfig& cfg, std::uint64_t seed,
                     const FeederModel& m = *fixtures::ieee37()) {
  Rng rng(seed);
  return generate_scenario(cfg, m, DroopCurve{}, rng);
}

double compromised_fraction(const EpisodeScenario& sc, const FeederModel& m) {
  double h = 0.0;
  for (std::size_t i = 0; i < m.inverters().size(); ++i) h += sc.compromised_share[i] * m.inverters()[i].capacity;
  return h / m.total_inverter_capacity();
}

double largest_share(const FeederModel& m) {
  double c = 0.0;
  for (const auto& s : m.inverters()) c = std::max(c, s.capacity);
  return c / m.total_inverter_capacity();
}

}  // namespace

TEST(Scenario, SameSeedSameScenario) {
  const ScenarioConfig cfg;
  EXPECT_EQ(make(cfg, 42), make(cfg, 42));
}

TEST(Scenario, DifferentSeedsDiffer) {
  const ScenarioConfig cfg;
  EXPECT_NE(make(cfg, 42).load_multiplier, make(cfg, 43).load_multiplier);
}

TEST(Scenario, FixedFractionWithinOneInverter) {
  ScenarioConfig cfg;
  cfg.attack_fraction_min = cfg.attack_fraction_max = 0.45;
  const auto& m = *fixtures::ieee37();
  for (std::uint64_t s = 0; s < 20; ++s) {
    EXPECT_NEAR(compromised_fraction(make(cfg, s), m), 0.45, largest_share(m));
  }
}

TEST(Scenario, CapacityAccountingOverSeeds) {
  const ScenarioConfig cfg;
  const auto& m = *fixtures::ieee37();
  const double g = largest_share(m);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto sc = make(cfg, s);
    const double f = compromised_fraction(sc, m);
    EXPECT_GE(f, cfg.attack_fraction_min - g);
    EXPECT_LE(f, cfg.attack_fraction_max + g);
    EXPECT_NEAR(f, sc.target_fraction, g);
    // Every inverter is in exactly one of the two sets, and some stay clean.
    const auto h = sc.compromised_set();
    EXPECT_LT(h.size(), m.inverters().size());
    for (double x : sc.compromised_share) EXPECT_TRUE(x == 0.0 || x == 1.0);
  }
}

TEST(Scenario, PerNodeModeSharesEveryInverter) {
  ScenarioConfig cfg;
  cfg.attack_mode = AttackMode::kPerNode;
  const auto sc = make(cfg, 5);
  for (double x : sc.compromised_share) EXPECT_EQ(x, sc.target_fraction);
  EXPECT_NEAR(compromised_fraction(sc, *fixtures::ieee37()), sc.target_fraction, 1e-12);
}

TEST(Scenario, LoadProfileSmoothAndBounded) {
  const ScenarioConfig cfg;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto sc = make(cfg, s);
    for (std::size_t t = 0; t < sc.load_multiplier.size(); ++t) {
      for (std::size_t b = 0; b < sc.load_multiplier[t].size(); ++b) {
        const double x = sc.load_multiplier[t][b];
        ASSERT_GE(x, 0.7);
        ASSERT_LE(x, 1.3);
        if (t > 0) {
          ASSERT_LE(std::abs(x - sc.load_multiplier[t - 1][b]), 0.05);
        }
      }
    }
  }
}

TEST(Scenario, SolarZeroAfterSunset) {
  ScenarioConfig cfg;
  cfg.day_position_h = 11.9;  // sunset 360 s into the episode
  const auto sc = make(cfg, 1);
  for (int t = 0; t < cfg.episode_len; ++t) {
    for (double p : sc.solar_p_max[t]) {
      ASSERT_GE(p, 0.0);
      if (t > 360) {
        ASSERT_EQ(p, 0.0);
      }
    }
  }
  EXPECT_GT(sc.solar_p_max[0][0], 0.0);
}

TEST(Scenario, SolarBellPeaksAtNoon) {
  ScenarioConfig cfg;
  cfg.day_position_h = 6.0;
  const auto& m = *fixtures::ieee37();
  const auto sc = make(cfg, 1);
  for (std::size_t i = 0; i < m.inverters().size(); ++i) {
    EXPECT_NEAR(sc.solar_p_max[0][i], rated_solar(m, m.inverters()[i], cfg.pv_penetration), 1e-12);
  }
}

TEST(Scenario, RandomizedAttackStartRange) {
  const ScenarioConfig cfg;
  int lo = 1 << 30, hi = 0;
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto sc = make(cfg, s);
    lo = std::min(lo, sc.attack_start);
    hi = std::max(hi, sc.attack_start);
    EXPECT_EQ(sc.attack_end - sc.attack_start, cfg.attack_duration);
  }
  EXPECT_GE(lo, 100);
  EXPECT_LE(hi, cfg.episode_len - 250);
}

TEST(Scenario, PresetSettings) {
  const auto noon = fixtures::preset("eval_45pct_noon");
  EXPECT_EQ(noon.env.scenario.attack_start, 200);
  EXPECT_EQ(noon.env.scenario.attack_duration, 250);
  EXPECT_EQ(noon.env.scenario.attack_fraction_min, 0.45);
  const auto morning = fixtures::preset("eval_20pct_9am");
  EXPECT_EQ(morning.env.scenario.attack_fraction_max, 0.2);
  ASSERT_TRUE(morning.env.scenario.day_position_h.has_value());
  EXPECT_LT(*morning.env.scenario.day_position_h, *noon.env.scenario.day_position_h);
}

TEST(Scenario, InfeasibleFractionRejected) {
  ScenarioConfig cfg;
  cfg.attack_fraction_min = cfg.attack_fraction_max = 0.9;
  // One inverter: compromising it leaves nothing controllable.
  EXPECT_THROW(make(cfg, 1, *fixtures::two_bus()), ConfigError);
  cfg.attack_fraction_max = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.agent_period = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.attack_start = 600;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AttackedCurve, ZeroIsDefault) {
  ScenarioConfig cfg;
  cfg.attack_offset = 0.0;
  cfg.attack_slope = 0.0;
  EXPECT_EQ(attacked_curve(DroopCurve{}, cfg), DroopCurve{});
}

TEST(AttackedCurve, CollapsesRamps) {
  const ScenarioConfig cfg;
  const auto c = attacked_curve(DroopCurve{}, cfg);
  EXPECT_NEAR(c.eta[1] - c.eta[0], cfg.attack_min_gap, 1e-9);
  EXPECT_NEAR(c.eta[3] - c.eta[2], cfg.attack_min_gap, 1e-9);
  EXPECT_NEAR(c.eta[2], DroopCurve{}.eta[2] + cfg.attack_offset, 1e-12);
}
