#include <gtest/gtest.h>

#include <cmath>

#include "droopguard/inverter.hpp"
#include "droopguard/rng.hpp"

using namespace droopguard;

namespace {

DroopCurve random_curve(Rng& rng) {
  DroopCurve c;
  double e = rng.uniform(0.85, 1.0);
  c.eta[0] = e;
  c.eta[1] = (e += rng.uniform(0.001, 0.05));
  c.eta[2] = (e += rng.uniform(0.0, 0.05));
  c.eta[3] = (e += rng.uniform(0.001, 0.05));
  c.eta[4] = (e += rng.uniform(0.001, 0.05));
  return c;
}

}  // namespace

TEST(VoltWatt, Branches) {
  const DroopCurve c;
  EXPECT_EQ(volt_watt(c, 0.9, 0.8), 0.8);
  EXPECT_EQ(volt_watt(c, c.eta[3], 0.8), 0.8);
  EXPECT_NEAR(volt_watt(c, 0.5 * (c.eta[3] + c.eta[4]), 0.8), 0.4, 1e-12);
  EXPECT_EQ(volt_watt(c, 1.2, 0.8), 0.0);
}

TEST(VarHeadroom, Cases) {
  EXPECT_NEAR(var_headroom(1.1, 1.0), 0.458, 5e-4);
  EXPECT_NEAR(var_headroom(1.1, 1.0), std::sqrt(0.21), 1e-15);
  EXPECT_EQ(var_headroom(0.7, 0.0), 0.7);
  EXPECT_EQ(var_headroom(0.7, 0.7), 0.0);
}

TEST(VoltVar, Branches) {
  const DroopCurve c;
  EXPECT_EQ(volt_var(c, 0.9, 0.3), 0.3);
  EXPECT_EQ(volt_var(c, c.eta[1], 0.3), 0.0);
  EXPECT_EQ(volt_var(c, c.eta[2], 0.3), 0.0);
  EXPECT_EQ(volt_var(c, 1.0, 0.3), 0.0);
  EXPECT_NEAR(volt_var(c, 0.5 * (c.eta[2] + c.eta[3]), 0.3), -0.15, 1e-12);
  EXPECT_NEAR(volt_var(c, 0.5 * (c.eta[0] + c.eta[1]), 0.3), 0.15, 1e-12);
  EXPECT_EQ(volt_var(c, 1.2, 0.3), -0.3);
}

TEST(DroopLaws, RandomCurvesLipschitzAndMonotone) {
  Rng rng(11);
  for (int k = 0; k < 10000; ++k) {
    const DroopCurve c = random_curve(rng);
    const double pm = rng.uniform(0.0, 1.0), qa = rng.uniform(0.0, 1.0);
    const double v = rng.uniform(0.8, 1.3), eps = 1e-7;
    const double lp = pm / (c.eta[4] - c.eta[3]) + 1e-9;
    const double lq = qa / std::min(c.eta[1] - c.eta[0], c.eta[3] - c.eta[2]) + 1e-9;
    const double p0 = volt_watt(c, v, pm), p1 = volt_watt(c, v + eps, pm);
    const double q0 = volt_var(c, v, qa), q1 = volt_var(c, v + eps, qa);
    ASSERT_LE(std::abs(p1 - p0), lp * eps * (1 + 1e-6) + 1e-14);
    ASSERT_LE(std::abs(q1 - q0), lq * eps * (1 + 1e-6) + 1e-14);
    ASSERT_LE(p1, p0 + 1e-15);
    ASSERT_LE(q1, q0 + 1e-15);
    ASSERT_GE(p0, 0.0);
    ASSERT_LE(p0, pm);
    ASSERT_LE(std::abs(q0), qa);
  }
}

TEST(DroopLaws, EquilibriumWithinCapacity) {
  Rng rng(12);
  for (int k = 0; k < 10000; ++k) {
    const DroopCurve c = random_curve(rng);
    const double s = rng.uniform(0.01, 1.0), pm = s * rng.uniform(0.0, 1.0);
    const auto sp = droop_setpoint(c, rng.uniform(0.8, 1.3), s, pm);
    ASSERT_LE(sp.p * sp.p + sp.q * sp.q, s * s * (1.0 + 1e-14));
  }
}

TEST(StepInverter, UnitGainsReachSetpointInOneStep) {
  InverterState st;
  st.tau_m = st.tau_o = 1.0;
  st.s = 1.1;
  st.p_max = 1.0;
  st = step_inverter(st, 1.0);
  EXPECT_EQ(st.p, 1.0);
  EXPECT_EQ(st.q, 0.0);
}

TEST(StepInverter, ConvergesToFixedPoint) {
  InverterState st;
  st.tau_m = 0.3;
  st.tau_o = 0.3;
  st.s = 1.1;
  st.p_max = 1.0;
  const double v = 1.07;
  const auto target = droop_setpoint(st.curve, v, st.s, st.p_max);
  double prev = 1e9;
  for (int k = 0; k < 400; ++k) {
    st = step_inverter(st, v);
    const double d = std::hypot(st.p - target.p, st.q - target.q);
    // After the measurement transient has decayed the distance shrinks.
    if (k > 60) {
      ASSERT_LE(d, prev);
    }
    prev = d;
  }
  EXPECT_NEAR(st.p, target.p, 1e-9);
  EXPECT_NEAR(st.q, target.q, 1e-9);
}

TEST(StepInverter, MonotoneContractionRandom) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    InverterState st;
    st.curve = random_curve(rng);
    st.tau_m = rng.uniform(0.05, 1.0);
    st.tau_o = rng.uniform(0.05, 1.0);
    st.s = 1.0;
    st.p_max = rng.uniform(0.0, 1.0);
    st.v_bar = rng.uniform(0.9, 1.1);
    st.p = rng.uniform(0.0, st.p_max);
    const double v = rng.uniform(0.9, 1.2);
    // Run until v_bar has settled to the grid of doubles, then check the
    // output distance is non-increasing.
    for (int k = 0; k < 2000 && st.v_bar != v; ++k) st = step_inverter(st, v);
    const auto target = droop_setpoint(st.curve, st.v_bar, st.s, st.p_max);
    double prev = std::hypot(st.p - target.p, st.q - target.q);
    for (int k = 0; k < 50; ++k) {
      st = step_inverter(st, v);
      const double d = std::hypot(st.p - target.p, st.q - target.q);
      ASSERT_LE(d, prev + 1e-15);
      prev = d;
    }
  }
}

TEST(ApplyAction, Identity) {
  const DroopCurve c;
  EXPECT_EQ(apply_action(c, 0.0, 0.0), c);
}

TEST(ApplyAction, OffsetTranslatesAll) {
  const DroopCurve c;
  const auto out = apply_action(c, 0.05, 0.0);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(out.eta[k], c.eta[k] + 0.05, 1e-12);
}

TEST(ApplyAction, MaxSteepeningClampsToMinGap) {
  const DroopCurve c;
  const auto out = apply_action(c, 0.0, 0.05);
  EXPECT_NEAR(out.eta[1] - out.eta[0], kDefaultMinGap, 1e-12);
  EXPECT_NEAR(out.eta[3] - out.eta[2], kDefaultMinGap, 1e-12);
  EXPECT_TRUE(out.valid());
}

TEST(ApplyAction, SlopeChangesRampWidths) {
  const DroopCurve c;
  const auto out = apply_action(c, 0.0, -0.01);
  EXPECT_NEAR(out.eta[1] - out.eta[0], 0.04, 1e-12);
  EXPECT_NEAR(out.eta[3] - out.eta[2], 0.04, 1e-12);
  EXPECT_EQ(out.eta[1], c.eta[1]);
  EXPECT_EQ(out.eta[2], c.eta[2]);
  EXPECT_EQ(out.eta[4], c.eta[4]);
}

TEST(ApplyAction, OffsetRoundTripIsExact) {
  Rng rng(14);
  for (int k = 0; k < 1000; ++k) {
    DroopCurve c = random_curve(rng);
    for (auto& e : c.eta) e = snap_breakpoint(e);
    const double off = rng.uniform(-0.05, 0.05);
    EXPECT_EQ(apply_action(apply_action(c, off, 0.0), -off, 0.0), c);
  }
}

TEST(ApplyAction, ResultsAlwaysValid) {
  const DroopCurve c;
  for (int i = -5; i <= 5; ++i) {
    for (int j = -5; j <= 5; ++j) {
      EXPECT_TRUE(apply_action(c, 0.01 * i, 0.01 * j).valid());
    }
  }
}

TEST(CurveDeviation, ZeroForUntouchedCurve) {
  const DroopCurve c;
  EXPECT_EQ(curve_deviation_norm(apply_action(c, 0.0, 0.0), c), 0.0);
  EXPECT_NEAR(curve_deviation_norm(apply_action(c, 0.01, 0.0), c), 0.01 * std::sqrt(5.0), 1e-12);
}
