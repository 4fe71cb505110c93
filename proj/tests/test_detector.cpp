#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "droopguard/detector.hpp"
#include "droopguard/rng.hpp"
#include "oracles.hpp"

using namespace droopguard;
using namespace droopguard::oracles;

TEST(Detector, ConstantInputDecaysToZero) {
  OscillationFilter f;
  double y = 1.0;
  for (int t = 0; t < 10000; ++t) y = f.step(1.0);
  EXPECT_LT(y, 1e-9);
}

// The square-law output of A sin is c A^2/2 plus a term at twice the
// frequency; the low-pass keeps the first.
TEST(Detector, SinusoidEnergyMatchesAnalytic) {
  DetectorParams p;
  for (double freq : {0.2, 0.25, 0.4}) {
    const double amp = 0.004;
    const double expect = p.gain * amp * amp / 2.0;
    EXPECT_NEAR(sine_energy(p, amp, freq), expect, 0.05 * expect) << freq;
    // Tighter, with the exact passband gain of the discrete high-pass.
    const double g = hp_gain(p, freq);
    EXPECT_NEAR(sine_energy(p, amp, freq), expect * g * g, 0.02 * expect) << freq;
  }
}

TEST(Detector, OffsetInvariant) {
  DetectorParams p;
  const double a = sine_energy(p, 0.003, 0.3, 1.0);
  const double b = sine_energy(p, 0.003, 0.3, 0.95);
  EXPECT_NEAR(a, b, 1e-6);
}

TEST(Detector, ScalesWithAmplitudeSquared) {
  DetectorParams p;
  const double a = sine_energy(p, 0.002, 0.3);
  for (double alpha : {0.5, 2.0, 4.0}) {
    const double b = sine_energy(p, 0.002 * alpha, 0.3);
    EXPECT_NEAR(b / a, alpha * alpha, 0.01 * alpha * alpha);
  }
}

TEST(Detector, StepTransientDecays) {
  OscillationFilter f;
  double peak = 0.0, y = 0.0;
  for (int t = 0; t < 3000; ++t) {
    y = f.step(t < 100 ? 0.95 : 1.05);
    peak = std::max(peak, y);
  }
  EXPECT_GT(peak, 1.0);
  EXPECT_LT(y, 1e-6 * peak);
}

TEST(Detector, NonNegativeAndBounded) {
  Rng rng(3);
  OscillationFilter f;
  DetectorParams p;
  double peak = 0.0;
  for (int t = 0; t < 1000000; ++t) {
    const double y = f.step(rng.uniform(-2.0, 2.0));
    if (!(y >= 0.0)) FAIL() << "y = " << y << " at " << t;
    peak = std::max(peak, y);
  }
  // The high-pass impulse response has L1 norm 2, so |dv| <= 2 * 2 and the
  // low-pass (unit DC gain, non-negative response) keeps y <= c * 16.
  EXPECT_LE(peak, p.gain * 16.0);
}

TEST(Detector, RejectsBadParams) {
  DetectorParams p;
  p.f_lp = 0.05;
  EXPECT_THROW(OscillationFilter{p}, std::invalid_argument);
  p = {};
  p.f_hp = 0.6;
  EXPECT_THROW(OscillationFilter{p}, std::invalid_argument);
  p = {};
  p.gain = 0.0;
  EXPECT_THROW(OscillationFilter{p}, std::invalid_argument);
}

TEST(WindowStats, Examples) {
  const std::vector<double> zeros(5, 0.0);
  auto s = window_stats(zeros, {});
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.max_recent, 0.0);
  const std::vector<double> w{1, 2, 3};
  s = window_stats(w, {});
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.max_recent, 2.0);
  const std::vector<double> hist{5.0, 1.0};
  EXPECT_EQ(window_stats(w, hist).max_recent, 5.0);
  const std::vector<double> one{1.0}, hist3{4.0, 0.5};
  EXPECT_EQ(window_stats(one, hist3).max_recent, 4.0);
  EXPECT_THROW(window_stats(std::vector<double>{}, {}), std::invalid_argument);
}

TEST(WindowHistory, ForgetsAfterNWindows) {
  WindowHistory h(3);
  const std::vector<double> big{9.0}, small{1.0};
  EXPECT_EQ(h.close_window(big).max_recent, 9.0);
  EXPECT_EQ(h.close_window(small).max_recent, 9.0);
  EXPECT_EQ(h.close_window(small).max_recent, 9.0);
  EXPECT_EQ(h.close_window(small).max_recent, 1.0);
  EXPECT_THROW(WindowHistory(0), std::invalid_argument);
}
