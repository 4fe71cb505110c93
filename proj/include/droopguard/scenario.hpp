#pragma once

// Randomized episode scenarios: load and solar profiles, which inverters the
// attacker controls, when the attack runs, and the malicious droop curve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "droopguard/errors.hpp"
#include "droopguard/feeder.hpp"
#include "droopguard/inverter.hpp"
#include "droopguard/rng.hpp"

namespace droopguard {

enum class AttackMode { kGlobal, kPerNode };

struct ScenarioConfig {
  std::string feeder;  // path to the feeder file
  // Slack-bus voltage magnitude; empty uses the value in the feeder file.
  std::optional<double> source_voltage;
  int episode_len = 700;
  int agent_period = 35;
  double pv_penetration = 0.5;
  double oversize = 0.10;
  double load_variation = 0.3;  // multiplier stays in [1 - v, 1 + v]
  double day_length_h = 12.0;   // sunrise to sunset
  // Hours after sunrise at episode start; empty means uniformly random over
  // the daylight window.
  std::optional<double> day_position_h;
  double attack_fraction_min = 0.15;
  double attack_fraction_max = 0.50;
  AttackMode attack_mode = AttackMode::kGlobal;
  // Empty start means "randomized": uniform in [100, episode_len - 250].
  std::optional<int> attack_start;
  int attack_duration = 250;
  double attack_offset = -0.05;
  double attack_slope = 0.05;
  // Targeted attack: at onset each compromised inverter translates its curve
  // so the upper VAR ramp starts attack_margin below the voltage it measures.
  // Otherwise every compromised curve is the default translated by
  // attack_offset.
  bool attack_targeted = true;
  double attack_margin = 0.003;
  // Narrowest VAR ramp an attacker may program. Smaller than the agent's
  // minimum gap: the attacker is not bound by the defender's action limits.
  double attack_min_gap = 1e-6;
  std::uint64_t seed = 0;

  void validate() const {
    if (episode_len < 1) throw ConfigError("episode_len", "must be >= 1");
    if (agent_period < 1 || agent_period > episode_len) {
      throw ConfigError("agent_period", "must lie in [1, episode_len]");
    }
    if (!(pv_penetration >= 0.0)) throw ConfigError("pv_penetration", "must be >= 0");
    if (!(oversize >= 0.0)) throw ConfigError("oversize", "must be >= 0");
    if (!(load_variation >= 0.0 && load_variation < 1.0)) {
      throw ConfigError("load_variation", "must lie in [0, 1)");
    }
    if (!(day_length_h > 0.0)) throw ConfigError("day_length_h", "must be positive");
    if (!(attack_fraction_min > 0.0 && attack_fraction_min <= attack_fraction_max &&
          attack_fraction_max < 1.0)) {
      throw ConfigError("attack_fraction", "range must satisfy 0 < min <= max < 1");
    }
    if (attack_duration < 0) throw ConfigError("attack_duration", "must be >= 0");
    if (attack_start) {
      if (*attack_start < 0 || *attack_start + attack_duration > episode_len) {
        throw ConfigError("attack_start", "attack window must lie inside the episode");
      }
    } else if (episode_len - 250 < 100 || attack_duration > 250) {
      throw ConfigError("attack_start",
                        "randomized attack start needs episode_len >= 350 and duration <= 250");
    }
    if (source_voltage && !(*source_voltage > 0.0)) {
      throw ConfigError("source_voltage", "must be positive");
    }
    if (!(attack_margin >= 0.0)) throw ConfigError("attack_margin", "must be >= 0");
    if (!(attack_min_gap > 0.0)) throw ConfigError("attack_min_gap", "must be positive");
  }
};

struct EpisodeScenario {
  int episode_len = 0;
  // load_multiplier[t][bus], solar_p_max[t][inverter]
  std::vector<std::vector<double>> load_multiplier;
  std::vector<std::vector<double>> solar_p_max;
  // Share of each inverter's capacity the attacker controls: 0 or 1 in global
  // mode, a common fraction in per-node mode.
  std::vector<double> compromised_share;
  int attack_start = 0;
  int attack_end = 0;
  double attack_offset = 0.0;
  double attack_slope = 0.0;
  bool attack_targeted = false;
  double attack_margin = 0.0;
  DroopCurve attacked_curve;
  double day_start_h = 0.0;
  double target_fraction = 0.0;

  bool attack_active(int t) const { return t >= attack_start && t < attack_end; }

  std::vector<std::size_t> compromised_set() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < compromised_share.size(); ++i) {
      if (compromised_share[i] > 0.0) out.push_back(i);
    }
    return out;
  }

  bool operator==(const EpisodeScenario&) const = default;
};

inline DroopCurve attacked_curve(const DroopCurve& base, const ScenarioConfig& cfg) {
  return apply_action(base, cfg.attack_offset, cfg.attack_slope, cfg.attack_min_gap);
}

// Peak solar for a site: penetration times the bus's nominal load, limited by
// the inverter capacity.
inline double rated_solar(const FeederModel& model, const InverterSite& site, double penetration) {
  return std::min(site.capacity, penetration * model.buses()[site.bus].p_load);
}

// Clear-sky shape: sin(pi * hours_since_sunrise / day_length), zero at night.
inline double clear_sky(double hours_since_sunrise, double day_length_h) {
  const double phase = hours_since_sunrise / day_length_h;
  if (phase <= 0.0 || phase >= 1.0) return 0.0;
  return std::sin(std::numbers::pi * phase);
}

namespace detail {

// Smooth multiplier: a sum of slow sinusoids with random phase. With periods
// of at least 600 steps the per-step change is bounded by
// amplitude * 2 pi / 600.
struct SlowWave {
  std::vector<double> amp, period, phase;

  static SlowWave draw(Rng& rng, int terms, double total_amp) {
    SlowWave w;
    std::vector<double> weights(terms);
    double sum = 0.0;
    for (auto& x : weights) sum += (x = rng.uniform(0.2, 1.0));
    for (int k = 0; k < terms; ++k) {
      w.amp.push_back(total_amp * weights[k] / sum * rng.uniform(0.5, 1.0));
      w.period.push_back(rng.uniform(600.0, 3600.0));
      w.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    return w;
  }

  double at(double t) const {
    double v = 0.0;
    for (std::size_t k = 0; k < amp.size(); ++k) {
      v += amp[k] * std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
    }
    return v;
  }
};

}  // namespace detail

// Builds one episode. Everything random comes from `rng`, so a fixed seed
// reproduces the scenario bit for bit.
inline EpisodeScenario generate_scenario(const ScenarioConfig& cfg, const FeederModel& model,
                                         const DroopCurve& default_curve, Rng& rng) {
  cfg.validate();
  const auto& sites = model.inverters();
  if (sites.empty()) throw ConfigError("feeder", "feeder has no inverters");
  const std::size_t nbus = model.size();
  const int len = cfg.episode_len;

  EpisodeScenario sc;
  sc.episode_len = len;

  // Load: shared slow wave plus a smaller per-bus wave.
  const double amp = cfg.load_variation;
  const auto shared = detail::SlowWave::draw(rng, 3, 0.6 * amp);
  std::vector<detail::SlowWave> local;
  for (std::size_t b = 0; b < nbus; ++b) local.push_back(detail::SlowWave::draw(rng, 2, 0.4 * amp));
  const double t0 = rng.uniform(0.0, 3600.0);
  sc.load_multiplier.assign(len, std::vector<double>(nbus));
  for (int t = 0; t < len; ++t) {
    const double g = shared.at(t0 + t);
    for (std::size_t b = 0; b < nbus; ++b) {
      sc.load_multiplier[t][b] = std::clamp(1.0 + g + local[b].at(t0 + t), 1.0 - amp, 1.0 + amp);
    }
  }

  // Solar: clear-sky bell placed at a random (or pinned) time of day.
  sc.day_start_h = cfg.day_position_h ? *cfg.day_position_h : rng.uniform(0.0, cfg.day_length_h);
  sc.solar_p_max.assign(len, std::vector<double>(sites.size()));
  for (int t = 0; t < len; ++t) {
    const double shape = clear_sky(sc.day_start_h + t / 3600.0, cfg.day_length_h);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      sc.solar_p_max[t][i] = rated_solar(model, sites[i], cfg.pv_penetration) * shape;
    }
  }

  // Compromised capacity.
  sc.target_fraction = rng.uniform(cfg.attack_fraction_min, cfg.attack_fraction_max);
  sc.compromised_share.assign(sites.size(), 0.0);
  if (cfg.attack_mode == AttackMode::kPerNode) {
    std::fill(sc.compromised_share.begin(), sc.compromised_share.end(), sc.target_fraction);
  } else {
    const double total = model.total_inverter_capacity();
    const double target = sc.target_fraction * total;
    std::vector<std::size_t> remaining(sites.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    double taken = 0.0;
    while (!remaining.empty()) {
      // Capacity-weighted draw without replacement.
      double weight_sum = 0.0;
      for (auto i : remaining) weight_sum += sites[i].capacity;
      double pick = rng.uniform() * weight_sum;
      std::size_t slot = 0;
      for (; slot + 1 < remaining.size(); ++slot) {
        pick -= sites[remaining[slot]].capacity;
        if (pick < 0.0) break;
      }
      const std::size_t inv = remaining[slot];
      const double with = taken + sites[inv].capacity;
      if (std::abs(with - target) >= std::abs(taken - target)) break;
      sc.compromised_share[inv] = 1.0;
      taken = with;
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(slot));
    }
    if (remaining.empty()) {
      throw ConfigError("attack_fraction", "attack would compromise every inverter");
    }
  }

  // Attack window.
  sc.attack_start = cfg.attack_start
                        ? *cfg.attack_start
                        : 100 + static_cast<int>(rng.index(static_cast<std::uint64_t>(len - 250 - 100 + 1)));
  sc.attack_end = sc.attack_start + cfg.attack_duration;
  sc.attack_offset = cfg.attack_offset;
  sc.attack_slope = cfg.attack_slope;
  sc.attack_targeted = cfg.attack_targeted;
  sc.attack_margin = cfg.attack_margin;
  sc.attacked_curve = attacked_curve(default_curve, cfg);
  return sc;
}

}  // namespace droopguard
