#pragma once

// Smart-inverter Volt-VAR / Volt-Watt droop laws with Volt-Watt precedence,
// plus the discrete first-order measurement and output filters that drive an
// inverter toward its droop setpoints.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace droopguard {

// Breakpoints are snapped to this grid so that translating a curve and
// translating it back restores the original values bit for bit.
inline constexpr double kBreakpointQuantum = 1e-9;
inline constexpr double kDefaultMinGap = 0.005;

inline double snap_breakpoint(double v) {
  return std::round(v / kBreakpointQuantum) * kBreakpointQuantum;
}

// Five voltage breakpoints. eta[0..1] shape the capacitive VAR ramp, eta[1..2]
// is the deadband, eta[2..3] the inductive VAR ramp, eta[3..4] the Volt-Watt
// curtailment ramp.
struct DroopCurve {
  std::array<double, 5> eta{0.95, 0.98, 1.02, 1.05, 1.10};

  static DroopCurve standard() { return {}; }

  bool valid() const {
    for (double e : eta) {
      if (!(e > 0.5 && e < 1.5)) return false;
    }
    return eta[0] < eta[1] && eta[1] <= eta[2] && eta[2] < eta[3] && eta[3] < eta[4];
  }

  void validate() const {
    if (!valid()) {
      throw std::invalid_argument("droop curve breakpoints must satisfy 0.5 < e1 < e2 <= e3 < e4 < e5 < 1.5");
    }
  }

  bool operator==(const DroopCurve&) const = default;
};

// Volt-Watt: full available power up to eta4, linear curtailment to zero at eta5.
inline double volt_watt(const DroopCurve& c, double v_bar, double p_max) {
  const auto& e = c.eta;
  if (v_bar <= e[3]) return p_max;
  if (v_bar <= e[4]) return (e[4] - v_bar) / (e[4] - e[3]) * p_max;
  return 0.0;
}

// Apparent-power headroom left for reactive power once active output is fixed.
inline double var_headroom(double s, double u_p) {
  return std::sqrt(std::max(0.0, s * s - u_p * u_p));
}

// Volt-VAR: inject up to eta1, ramp to zero at eta2, deadband to eta3, ramp
// to full absorption at eta4.
inline double volt_var(const DroopCurve& c, double v_bar, double q_avail) {
  const auto& e = c.eta;
  if (v_bar <= e[0]) return q_avail;
  if (v_bar <= e[1]) return (e[1] - v_bar) / (e[1] - e[0]) * q_avail;
  if (v_bar < e[2]) return 0.0;
  if (v_bar <= e[3]) return -(v_bar - e[2]) / (e[3] - e[2]) * q_avail;
  return -q_avail;
}

// Combined setpoint with Volt-Watt precedence: curtail first, then size the
// VAR limit from what the curtailed active power leaves.
struct DroopSetpoint {
  double p = 0.0;
  double q = 0.0;
  double q_avail = 0.0;
};

inline DroopSetpoint droop_setpoint(const DroopCurve& c, double v_bar, double s, double p_max) {
  DroopSetpoint out;
  out.p = volt_watt(c, v_bar, p_max);
  out.q_avail = var_headroom(s, out.p);
  out.q = std::clamp(volt_var(c, v_bar, out.q_avail), -out.q_avail, out.q_avail);
  return out;
}

struct InverterState {
  double v_bar = 1.0;
  double p = 0.0;
  double q = 0.0;
  double tau_m = 0.7;
  double tau_o = 0.7;
  double s = 0.0;
  double p_max = 0.0;
  DroopCurve curve;
  bool compromised = false;
};

// One tick of the measurement filter followed by the output filters.
inline InverterState step_inverter(InverterState st, double v_meas) {
  st.v_bar += st.tau_m * (v_meas - st.v_bar);
  const DroopSetpoint target = droop_setpoint(st.curve, st.v_bar, st.s, st.p_max);
  st.p += st.tau_o * (target.p - st.p);
  st.q += st.tau_o * (target.q - st.q);
  return st;
}

// Places the inverter at the fixed point of its filters for voltage v.
inline InverterState settle_inverter(InverterState st, double v) {
  st.v_bar = v;
  const DroopSetpoint target = droop_setpoint(st.curve, v, st.s, st.p_max);
  st.p = target.p;
  st.q = target.q;
  return st;
}

// Translates every breakpoint by `offset` and changes the two VAR ramp widths
// (eta2-eta1 and eta4-eta3) by -slope_delta, so positive slope_delta steepens
// the curve. eta2 and eta3 stay put relative to the offset; eta1 and eta4
// move. Ramp widths are clamped to [min_gap, ...] and eta4 is kept at least
// min_gap below eta5.
inline DroopCurve apply_action(const DroopCurve& base, double offset, double slope_delta,
                               double min_gap = kDefaultMinGap) {
  DroopCurve out = base;
  if (offset != 0.0) {
    for (int k = 0; k < 5; ++k) out.eta[k] = snap_breakpoint(base.eta[k] + offset);
  }
  if (slope_delta != 0.0) {
    const auto& b = base.eta;
    const double low_gap = std::max(min_gap, (b[1] - b[0]) - slope_delta);
    const double high_gap =
        std::clamp((b[3] - b[2]) - slope_delta, min_gap, std::max(min_gap, (b[4] - b[2]) - min_gap));
    out.eta[0] = snap_breakpoint(out.eta[1] - low_gap);
    out.eta[3] = snap_breakpoint(out.eta[2] + high_gap);
  }
  if (!out.valid()) {
    throw std::invalid_argument("droop action (offset " + std::to_string(offset) + ", slope " +
                                std::to_string(slope_delta) + ") yields an invalid curve");
  }
  return out;
}

// Breakpoint deviation from `base`, as a 5-vector Euclidean norm. Each
// difference is snapped to the breakpoint grid, so an untouched curve has
// deviation exactly 0.
inline double curve_deviation_norm(const DroopCurve& curve, const DroopCurve& base) {
  double sum = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double d = snap_breakpoint(curve.eta[k] - base.eta[k]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace droopguard
