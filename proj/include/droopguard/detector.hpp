#pragma once

// Oscillation-energy observer: first-order high-pass, square-law gain, then a
// first-order low-pass. Both filters are bilinear-transform discretizations
// with cutoff prewarping.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace droopguard {

struct DetectorParams {
  double f_hp = 0.02;  // Hz
  double f_lp = 0.01;  // Hz
  double gain = 1.0e5;  // scales a 0.005 pu swing to y of order 1
  double dt = 1.0;  // s

  void validate() const {
    const double nyquist = 0.5 / dt;
    if (!(dt > 0.0) || !(f_lp > 0.0) || !(f_lp < f_hp) || !(f_hp < nyquist)) {
      throw std::invalid_argument("detector needs 0 < f_lp < f_hp < 1/(2 dt)");
    }
    if (!(gain > 0.0)) throw std::invalid_argument("detector gain must be positive");
  }
};

// y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]
struct FirstOrderSection {
  double b0 = 1.0;
  double b1 = 0.0;
  double a1 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  static FirstOrderSection high_pass(double fc, double dt) {
    const double k = std::tan(std::numbers::pi * fc * dt);
    return {1.0 / (1.0 + k), -1.0 / (1.0 + k), (k - 1.0) / (k + 1.0)};
  }

  static FirstOrderSection low_pass(double fc, double dt) {
    const double k = std::tan(std::numbers::pi * fc * dt);
    return {k / (1.0 + k), k / (1.0 + k), (k - 1.0) / (k + 1.0)};
  }

  double step(double x) {
    const double y = b0 * x + b1 * x1 - a1 * y1;
    x1 = x;
    y1 = y;
    return y;
  }
};

class OscillationFilter {
 public:
  OscillationFilter() : OscillationFilter(DetectorParams{}) {}

  explicit OscillationFilter(const DetectorParams& params)
      : params_(params),
        hp_(FirstOrderSection::high_pass(params.f_hp, params.dt)),
        lp_(FirstOrderSection::low_pass(params.f_lp, params.dt)) {
    params_.validate();
  }

  // Feeds one voltage sample and returns the energy estimate. The first
  // sample seeds the high-pass input history, so the first output is 0.
  double step(double v) {
    if (!primed_) {
      hp_.x1 = v;
      primed_ = true;
    }
    const double dv = hp_.step(v);
    const double y = lp_.step(params_.gain * dv * dv);
    // The low-pass of a nonnegative signal is nonnegative up to rounding.
    output_ = std::max(0.0, y);
    return output_;
  }

  double output() const { return output_; }
  const DetectorParams& params() const { return params_; }

 private:
  DetectorParams params_;
  FirstOrderSection hp_;
  FirstOrderSection lp_;
  bool primed_ = false;
  double output_ = 0.0;
};

struct WindowStats {
  double mean = 0.0;
  double max_recent = 0.0;
};

// Mean of the current window, and the max of that mean with the stored
// means of previous windows.
inline WindowStats window_stats(std::span<const double> samples, std::span<const double> history) {
  if (samples.empty()) throw std::invalid_argument("window_stats needs at least one sample");
  WindowStats s;
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.max_recent = s.mean;
  for (double h : history) s.max_recent = std::max(s.max_recent, h);
  return s;
}

// Keeps the last n-1 window means so that window_stats spans n windows.
class WindowHistory {
 public:
  explicit WindowHistory(std::size_t n = 5) : n_(n) {
    if (n == 0) throw std::invalid_argument("window history length must be >= 1");
  }

  WindowStats close_window(std::span<const double> samples) {
    std::vector<double> past(past_.begin(), past_.end());
    WindowStats s = window_stats(samples, past);
    past_.push_back(s.mean);
    while (past_.size() > n_ - 1) past_.pop_front();
    return s;
  }

  std::size_t length() const { return n_; }

 private:
  std::size_t n_;
  std::deque<double> past_;
};

}  // namespace droopguard
