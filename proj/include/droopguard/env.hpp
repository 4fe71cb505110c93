#pragma once

// Partially observed control environment. One agent interaction applies a
// droop-curve deviation to the uncompromised inverters and then advances the
// coupled grid / inverter / detector simulation by one agent period of
// one-second ticks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droopguard/detector.hpp"
#include "droopguard/errors.hpp"
#include "droopguard/feeder.hpp"
#include "droopguard/inverter.hpp"
#include "droopguard/rng.hpp"
#include "droopguard/scenario.hpp"

namespace droopguard {

enum class ActionEncoding { kFactored, kJoint };

// Discrete grid of (offset, slope) deviations. Actions are addressed by a
// joint index offset_bin * slopes.size() + slope_bin regardless of encoding;
// the encoding only decides how a policy factorizes its output.
struct ActionSpace {
  std::vector<double> offsets;
  std::vector<double> slopes;
  ActionEncoding encoding = ActionEncoding::kFactored;

  // Symmetric grid: -range..+range in steps of `step`.
  static std::vector<double> symmetric_grid(double range, double step) {
    const int half = static_cast<int>(std::lround(range / step));
    std::vector<double> g;
    for (int k = -half; k <= half; ++k) g.push_back(k * step);
    return g;
  }

  static ActionSpace standard() {
    return {symmetric_grid(0.05, 0.01), symmetric_grid(0.05, 0.01), ActionEncoding::kFactored};
  }

  int size() const { return static_cast<int>(offsets.size() * slopes.size()); }
  int offset_bin(int action) const { return action / static_cast<int>(slopes.size()); }
  int slope_bin(int action) const { return action % static_cast<int>(slopes.size()); }
  int compose(int offset_bin, int slope_bin) const {
    return offset_bin * static_cast<int>(slopes.size()) + slope_bin;
  }
  double offset(int action) const { return offsets[offset_bin(action)]; }
  double slope(int action) const { return slopes[slope_bin(action)]; }

  static int zero_bin(const std::vector<double>& g) {
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (g[k] == 0.0) return static_cast<int>(k);
    }
    return -1;
  }
  int null_action() const { return compose(zero_bin(offsets), zero_bin(slopes)); }

  // Sizes of the categorical heads a policy should emit.
  std::vector<int> head_sizes() const {
    if (encoding == ActionEncoding::kJoint) return {size()};
    return {static_cast<int>(offsets.size()), static_cast<int>(slopes.size())};
  }
  int from_heads(std::span<const int> choice) const {
    return encoding == ActionEncoding::kJoint ? choice[0] : compose(choice[0], choice[1]);
  }
  std::vector<int> to_heads(int action) const {
    if (encoding == ActionEncoding::kJoint) return {action};
    return {offset_bin(action), slope_bin(action)};
  }

  void validate() const {
    auto check = [](const std::vector<double>& g, const char* field) {
      if (g.empty()) throw ConfigError(field, "grid is empty");
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (std::abs(g[k] + g[g.size() - 1 - k]) > 1e-12) {
          throw ConfigError(field, "grid must be symmetric about zero");
        }
      }
      if (zero_bin(g) < 0) throw ConfigError(field, "grid must contain 0");
    };
    check(offsets, "action_offsets");
    check(slopes, "action_slopes");
  }

  bool operator==(const ActionSpace&) const = default;
};

struct RewardWeights {
  double sigma_y = 15.0;
  double sigma_a = 0.05;
  double sigma_0 = 18.0;
  double sigma_p = 80.0;
  double p_max_eps = 1e-6;
};

// Penalty magnitudes (all >= 0); the reward is minus their sum.
struct RewardTerms {
  double oscillation = 0.0;
  double action_change = 0.0;
  double deviation = 0.0;
  double curtailment = 0.0;

  double total() const { return -(oscillation + action_change + deviation + curtailment); }
};

// What one controllable inverter contributed over the last window.
struct InverterWindow {
  double y = 0.0;             // window-mean oscillation energy at its bus
  bool action_changed = false;
  double deviation_norm = 0.0;  // |delta eta| of its current curve, pu
  double curtailment = 0.0;     // window mean of (1 - p / p_max)^2
};

inline double curtailment_term(double p, double p_max, double eps = 1e-6) {
  if (p_max <= eps) return 0.0;
  const double r = 1.0 - p / p_max;
  return r * r;
}

// Averages every term over the controllable inverters.
inline RewardTerms compute_reward(const RewardWeights& w, std::span<const InverterWindow> units) {
  if (units.empty()) throw std::invalid_argument("reward needs at least one controllable inverter");
  RewardTerms r;
  for (const auto& u : units) {
    r.oscillation += w.sigma_y * u.y;
    r.action_change += u.action_changed ? w.sigma_a : 0.0;
    r.deviation += w.sigma_0 * u.deviation_norm;
    r.curtailment += w.sigma_p * u.curtailment;
  }
  const double n = static_cast<double>(units.size());
  r.oscillation /= n;
  r.action_change /= n;
  r.deviation /= n;
  r.curtailment /= n;
  return r;
}

struct Observation {
  double y_mean = 0.0;
  double y_max = 0.0;
  double q_avail_nom = 0.0;
  double capacity = 0.0;  // apparent-power rating behind q_avail_nom
  int prev_action = 0;
  int action_count = 0;

  // Network input: [y_mean, y_max, q_avail_nom, one-hot(prev_action)].
  std::vector<double> features() const {
    std::vector<double> f(3 + static_cast<std::size_t>(action_count), 0.0);
    f[0] = y_mean;
    f[1] = y_max;
    f[2] = q_avail_nom;
    f[3 + static_cast<std::size_t>(prev_action)] = 1.0;
    return f;
  }

  bool operator==(const Observation&) const = default;
};

inline int observation_size(const ActionSpace& space) { return 3 + space.size(); }

struct EnvConfig {
  ScenarioConfig scenario;
  DetectorParams detector;
  RewardWeights reward;
  ActionSpace actions = ActionSpace::standard();
  DroopCurve default_curve;
  double tau_m = 0.7;
  double tau_o = 0.7;
  double min_gap = kDefaultMinGap;
  int history_n = 5;
  PowerFlowOptions power_flow;
  // Bus whose voltage/energy go to the episode summary columns. Empty picks
  // the bus of the first controllable inverter.
  std::string log_bus;

  void validate() const {
    scenario.validate();
    detector.validate();
    actions.validate();
    default_curve.validate();
    if (!(tau_m > 0.0 && tau_m <= 1.0)) throw ConfigError("tau_m", "must lie in (0, 1]");
    if (!(tau_o > 0.0 && tau_o <= 1.0)) throw ConfigError("tau_o", "must lie in (0, 1]");
    if (!(min_gap > 0.0)) throw ConfigError("min_gap", "must be positive");
    if (history_n < 1) throw ConfigError("history_n", "must be >= 1");
    if (std::abs(detector.dt - 1.0) > 1e-12) {
      throw ConfigError("dt", "the environment ticks once per second; detector dt must be 1");
    }
  }
};

// Fills in one inverter per load bus when the feeder lists none:
// capacity = (1 + oversize) * penetration * p_load.
inline FeederModel with_default_inverters(const FeederModel& model, double penetration,
                                          double oversize) {
  if (!model.inverters().empty()) return model;
  std::vector<InverterSite> sites;
  for (std::size_t b = 1; b < model.size(); ++b) {
    const double cap = (1.0 + oversize) * penetration * model.buses()[b].p_load;
    if (cap > 0.0) sites.push_back({b, cap});
  }
  std::vector<Line> lines = model.lines();
  return FeederModel::build(model.buses(), lines, sites, model.slack_voltage());
}

// Per-tick record kept when logging is enabled.
struct TickRecord {
  int step = 0;
  std::vector<double> voltage;  // |V| per bus
  std::vector<double> energy;   // detector output per bus
  bool attack_active = false;
  // Attacker's curve translation and slope change at the logged bus (mean
  // over compromised units when none sits there); zero outside the attack.
  double attack_offset = 0.0;
  double attack_slope = 0.0;
  // Sum over controllable units of the Volt-Watt cut p_max - f^p(v_bar).
  double curtailed_power = 0.0;
};

// Per-window record kept when logging is enabled.
struct WindowRecord {
  int start_step = 0;
  int end_step = 0;
  std::vector<int> actions;  // per controllable unit
  RewardTerms terms;
};

struct EpisodeLog {
  std::vector<std::string> bus_ids;
  std::size_t log_bus = 0;
  std::size_t log_unit = 0;  // index into the controllable units
  std::vector<std::size_t> controllable_buses;  // bus of each controllable unit
  ActionSpace actions;
  int attack_start = 0;
  int attack_end = 0;
  double attack_offset = 0.0;
  double attack_slope = 0.0;
  std::vector<TickRecord> ticks;
  std::vector<WindowRecord> windows;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  RewardTerms terms;
  bool done = false;
};

class Environment {
 public:
  // One inverter "unit": a whole site in global attack mode, or the
  // compromised / uncompromised share of a site in per-node mode.
  struct Unit {
    std::size_t site = 0;
    std::size_t bus = 0;
    double share = 1.0;
    InverterState state;
    int action = 0;
    int prev_action = 0;
    // Curve the attacker installs (compromised units only) and its
    // translation from the default curve.
    DroopCurve attack_curve;
    double attack_offset = 0.0;
  };

  Environment(std::shared_ptr<const FeederModel> feeder, EnvConfig cfg)
      : feeder_(std::move(feeder)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!feeder_) throw std::invalid_argument("environment needs a feeder");
    if (feeder_->inverters().empty()) throw ConfigError("feeder", "feeder has no inverters");
  }

  const EnvConfig& config() const { return cfg_; }
  const FeederModel& feeder() const { return *feeder_; }
  const ActionSpace& actions() const { return cfg_.actions; }
  const EpisodeScenario& scenario() const { return scenario_; }
  int step_index() const { return step_; }
  bool done() const { return step_ >= scenario_.episode_len; }
  const std::vector<Unit>& units() const { return units_; }
  const std::vector<std::size_t>& controllable() const { return controllable_; }
  const std::vector<Complex>& voltages() const { return voltages_; }
  std::size_t agent_steps_per_episode() const {
    const int len = cfg_.scenario.episode_len, per = cfg_.scenario.agent_period;
    return static_cast<std::size_t>((len + per - 1) / per);
  }

  void enable_logging(bool on) { logging_ = on; }
  const EpisodeLog& log() const { return log_; }

  // Generates a scenario from `seed` and resets onto it.
  Observation reset(std::uint64_t seed) {
    Rng rng(seed, "scenario");
    return reset(generate_scenario(cfg_.scenario, *feeder_, cfg_.default_curve, rng));
  }

  Observation reset(EpisodeScenario scenario) {
    scenario_ = std::move(scenario);
    step_ = 0;
    build_units();
    detectors_.assign(feeder_->size(), OscillationFilter(cfg_.detector));
    window_energy_.assign(feeder_->size(), {});
    histories_.assign(units_.size(), WindowHistory(static_cast<std::size_t>(cfg_.history_n)));
    last_stats_.assign(units_.size(), {});
    settle_initial_state();

    log_ = EpisodeLog{};
    if (logging_) {
      for (const auto& b : feeder_->buses()) log_.bus_ids.push_back(b.id);
      log_.log_unit = 0;
      log_.log_bus = cfg_.log_bus.empty() ? units_[controllable_.front()].bus
                                          : feeder_->bus_index(cfg_.log_bus);
      if (!cfg_.log_bus.empty()) {
        for (std::size_t k = 0; k < controllable_.size(); ++k) {
          if (units_[controllable_[k]].bus == log_.log_bus) {
            log_.log_unit = k;
            break;
          }
        }
      }
      for (auto ui : controllable_) log_.controllable_buses.push_back(units_[ui].bus);
      log_.actions = cfg_.actions;
      log_.attack_start = scenario_.attack_start;
      log_.attack_end = scenario_.attack_end;
      log_.attack_offset = scenario_.attack_offset;
      log_.attack_slope = scenario_.attack_slope;
    }
    return observation();
  }

  // Training mode: one action for every controllable inverter; the returned
  // observation is the mean of the per-inverter observations.
  StepResult step(int action) {
    std::vector<int> all(controllable_.size(), action);
    return step_local(all);
  }

  // Deployment mode: one action per controllable inverter, in the order of
  // controllable(). The returned observation is still the aggregate one; use
  // local_observations() for the per-inverter inputs.
  StepResult step_local(std::span<const int> actions) {
    if (done()) throw std::logic_error("step called on a finished episode");
    if (actions.size() != controllable_.size()) {
      throw std::invalid_argument("need one action per controllable inverter");
    }
    for (int a : actions) {
      if (a < 0 || a >= cfg_.actions.size()) throw std::invalid_argument("action index out of range");
    }

    std::vector<double> curtail_sum(controllable_.size(), 0.0);
    for (std::size_t k = 0; k < controllable_.size(); ++k) {
      Unit& u = units_[controllable_[k]];
      u.prev_action = u.action;
      u.action = actions[k];
      u.state.curve = apply_action(cfg_.default_curve, cfg_.actions.offset(u.action),
                                   cfg_.actions.slope(u.action), cfg_.min_gap);
    }

    for (auto& w : window_energy_) w.clear();
    const int start = step_;
    const int end = std::min(scenario_.episode_len, step_ + cfg_.scenario.agent_period);
    for (; step_ < end; ++step_) {
      tick();
      for (std::size_t k = 0; k < controllable_.size(); ++k) {
        const Unit& u = units_[controllable_[k]];
        curtail_sum[k] += curtailment_term(u.state.p, u.state.p_max, cfg_.reward.p_max_eps);
      }
    }
    const double ticks = static_cast<double>(end - start);

    std::vector<InverterWindow> windows(controllable_.size());
    for (std::size_t k = 0; k < controllable_.size(); ++k) {
      const std::size_t ui = controllable_[k];
      const Unit& u = units_[ui];
      last_stats_[ui] = histories_[ui].close_window(window_energy_[u.bus]);
      windows[k].y = last_stats_[ui].mean;
      windows[k].action_changed = u.action != u.prev_action;
      windows[k].deviation_norm = curve_deviation_norm(u.state.curve, cfg_.default_curve);
      windows[k].curtailment = curtail_sum[k] / ticks;
    }

    StepResult out;
    out.terms = compute_reward(cfg_.reward, windows);
    out.reward = out.terms.total();
    out.observation = observation();
    out.done = done();
    if (logging_) {
      WindowRecord rec;
      rec.start_step = start;
      rec.end_step = end;
      rec.terms = out.terms;
      for (auto ui : controllable_) rec.actions.push_back(units_[ui].action);
      log_.windows.push_back(std::move(rec));
    }
    return out;
  }

  // Per-inverter observations, in the order of controllable().
  std::vector<Observation> local_observations() const {
    std::vector<Observation> out;
    for (auto ui : controllable_) out.push_back(local_observation(ui));
    return out;
  }

  // Mean of the local observations over the controllable inverters. All
  // controllable units share the previous action in training mode; in
  // deployment mode the first unit's previous action is reported.
  Observation observation() const {
    Observation o;
    o.action_count = cfg_.actions.size();
    for (auto ui : controllable_) {
      const Observation l = local_observation(ui);
      o.y_mean += l.y_mean;
      o.y_max += l.y_max;
      o.q_avail_nom += l.q_avail_nom;
      o.capacity += l.capacity;
    }
    const double n = static_cast<double>(controllable_.size());
    o.y_mean /= n;
    o.y_max /= n;
    o.q_avail_nom /= n;
    o.capacity /= n;
    o.prev_action = units_[controllable_.front()].action;
    return o;
  }

 private:
  Observation local_observation(std::size_t ui) const {
    const Unit& u = units_[ui];
    Observation o;
    o.action_count = cfg_.actions.size();
    o.y_mean = last_stats_[ui].mean;
    o.y_max = last_stats_[ui].max_recent;
    o.q_avail_nom = var_headroom(u.state.s, u.state.p_max);
    o.capacity = u.state.s;
    o.prev_action = u.action;
    return o;
  }

  void build_units() {
    units_.clear();
    controllable_.clear();
    const auto& sites = feeder_->inverters();
    const int null = cfg_.actions.null_action();
    auto add = [&](std::size_t site, double share, bool compromised) {
      Unit u;
      u.site = site;
      u.bus = sites[site].bus;
      u.share = share;
      u.state.tau_m = cfg_.tau_m;
      u.state.tau_o = cfg_.tau_o;
      u.state.s = share * sites[site].capacity;
      u.state.curve = cfg_.default_curve;
      u.state.compromised = compromised;
      u.action = u.prev_action = null;
      if (!compromised) controllable_.push_back(units_.size());
      units_.push_back(u);
    };
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const double h = scenario_.compromised_share.at(i);
      if (h > 0.0) add(i, h, true);
      if (h < 1.0) add(i, 1.0 - h, false);
    }
    if (controllable_.empty()) throw ConfigError("attack_fraction", "no controllable inverters left");
  }

  std::vector<Complex> injections(int t) const {
    std::vector<Complex> s(feeder_->size());
    const auto& mult = scenario_.load_multiplier[static_cast<std::size_t>(t)];
    for (std::size_t b = 0; b < feeder_->size(); ++b) {
      const Bus& bus = feeder_->buses()[b];
      s[b] = -mult[b] * Complex(bus.p_load, bus.q_load);
    }
    for (const auto& u : units_) s[u.bus] += Complex(u.state.p, u.state.q);
    return s;
  }

  void update_p_max(int t) {
    const auto& solar = scenario_.solar_p_max[static_cast<std::size_t>(t)];
    for (auto& u : units_) u.state.p_max = u.share * solar[u.site];
  }

  // Inverters at the fixed point of their default curves under step-0
  // conditions. Plain substitution (settle -> power flow -> settle) is the
  // unit-gain map and can cycle on a stiff droop, so outputs are relaxed
  // toward the settled values instead.
  void settle_initial_state() {
    update_p_max(0);
    voltages_.assign(feeder_->size(), Complex(source_voltage(), 0.0));
    constexpr double kRelax = 0.25;
    for (int iter = 0; iter < 5000; ++iter) {
      double change = 0.0;
      for (auto& u : units_) {
        const InverterState target = settle_inverter(u.state, std::abs(voltages_[u.bus]));
        const double dp = target.p - u.state.p, dq = target.q - u.state.q;
        change = std::max({change, std::abs(dp), std::abs(dq)});
        u.state.v_bar = target.v_bar;
        u.state.p += kRelax * dp;
        u.state.q += kRelax * dq;
      }
      auto sol = solve_power_flow(*feeder_, injections(0), source_voltage(),
                                  cfg_.power_flow, voltages_);
      voltages_ = std::move(sol.voltages);
      if (change < 1e-12) break;
    }
    for (auto& u : units_) u.state = settle_inverter(u.state, std::abs(voltages_[u.bus]));
    auto sol = solve_power_flow(*feeder_, injections(0), source_voltage(),
                                cfg_.power_flow, voltages_);
    voltages_ = std::move(sol.voltages);
  }

  double source_voltage() const {
    return cfg_.scenario.source_voltage.value_or(feeder_->slack_voltage());
  }

  void arm_attack() {
    for (auto& u : units_) {
      if (!u.state.compromised) continue;
      if (scenario_.attack_targeted) {
        u.attack_offset = u.state.v_bar - scenario_.attack_margin - cfg_.default_curve.eta[2];
        u.attack_curve = apply_action(cfg_.default_curve, u.attack_offset, scenario_.attack_slope,
                                      cfg_.scenario.attack_min_gap);
      } else {
        u.attack_offset = scenario_.attack_offset;
        u.attack_curve = scenario_.attacked_curve;
      }
    }
  }

  void tick() {
    const int t = step_;
    const bool attacked = scenario_.attack_active(t);
    update_p_max(t);
    if (t == scenario_.attack_start && attacked) arm_attack();
    for (auto& u : units_) {
      if (u.state.compromised) u.state.curve = attacked ? u.attack_curve : cfg_.default_curve;
      u.state = step_inverter(u.state, std::abs(voltages_[u.bus]));
    }
    auto sol = solve_power_flow(*feeder_, injections(t), source_voltage(),
                                cfg_.power_flow, voltages_);
    voltages_ = std::move(sol.voltages);
    for (std::size_t b = 0; b < feeder_->size(); ++b) {
      window_energy_[b].push_back(detectors_[b].step(std::abs(voltages_[b])));
    }
    if (logging_) {
      TickRecord rec;
      rec.step = t;
      rec.attack_active = attacked;
      for (std::size_t b = 0; b < feeder_->size(); ++b) {
        rec.voltage.push_back(std::abs(voltages_[b]));
        rec.energy.push_back(detectors_[b].output());
      }
      for (auto ui : controllable_) {
        const auto& st = units_[ui].state;
        rec.curtailed_power += st.p_max - volt_watt(st.curve, st.v_bar, st.p_max);
      }
      if (attacked) {
        double sum = 0.0;
        int n = 0;
        for (const auto& u : units_) {
          if (!u.state.compromised) continue;
          if (u.bus == log_.log_bus) {
            sum = u.attack_offset;
            n = 1;
            break;
          }
          sum += u.attack_offset;
          ++n;
        }
        rec.attack_offset = n > 0 ? sum / n : 0.0;
        rec.attack_slope = scenario_.attack_slope;
      }
      log_.ticks.push_back(std::move(rec));
    }
  }

  std::shared_ptr<const FeederModel> feeder_;
  EnvConfig cfg_;
  EpisodeScenario scenario_;
  int step_ = 0;
  std::vector<Unit> units_;
  std::vector<std::size_t> controllable_;
  std::vector<OscillationFilter> detectors_;
  std::vector<std::vector<double>> window_energy_;
  std::vector<WindowHistory> histories_;
  std::vector<WindowStats> last_stats_;
  std::vector<Complex> voltages_;
  bool logging_ = false;
  EpisodeLog log_;
};

}  // namespace droopguard
