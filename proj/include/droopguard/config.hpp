#pragma once

// Run configuration as INI text. Every key maps onto one field of
// RunConfig through a registry, which also drives `show-config` output and
// `section.key=value` overrides.
//
//   [scenario] [attack] [inverter] [detector] [env] [reward] [agent] [eval]

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "droopguard/agent.hpp"
#include "droopguard/env.hpp"
#include "droopguard/errors.hpp"

namespace droopguard {

struct EvalConfig {
  bool null_policy = false;
  PolicyMode mode = PolicyMode::kLocal;
  std::uint64_t seed = 0;
};

struct RunConfig {
  EnvConfig env;
  AgentConfig agent;
  EvalConfig eval;
  // Action grid as configured; env.actions is rebuilt from these.
  double action_range = 0.05;
  double action_step = 0.01;
  // Directory relative feeder paths are resolved against.
  std::string base_dir;

  std::string feeder_path() const {
    namespace fs = std::filesystem;
    const fs::path p(env.scenario.feeder);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (fs::path(base_dir) / p).lexically_normal().string();
  }
};

namespace config_detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw ConfigError(field, "expected a number, got '" + text + "'");
  }
  return v;
}

inline long long parse_int(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw ConfigError(field, "expected an integer, got '" + text + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field, "expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string name() const { return section + "." + key; }
};

template <class Getter>
Field real(std::string sec, std::string key, Getter ref) {
  const std::string name = sec + "." + key;
  return {sec, key, [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_double(name, v); }};
}

template <class Getter>
Field integer(std::string sec, std::string key, Getter ref) {
  const std::string name = sec + "." + key;
  return {sec, key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            ref(c) = static_cast<T>(parse_int(name, v));
          }};
}

template <class Getter>
Field boolean(std::string sec, std::string key, Getter ref) {
  const std::string name = sec + "." + key;
  return {sec, key, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); }};
}

// `random` (or empty) clears an optional value.
template <class Getter>
Field optional_real(std::string sec, std::string key, Getter ref, std::string empty_word) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [ref, empty_word](const RunConfig& c) {
            const auto& o = ref(const_cast<RunConfig&>(c));
            return o ? fmt_double(*o) : empty_word;
          },
          [ref, name, empty_word](RunConfig& c, const std::string& v) {
            const std::string t = trim(v);
            if (t.empty() || t == empty_word) {
              ref(c).reset();
            } else {
              ref(c) = parse_double(name, t);
            }
          }};
}

inline std::vector<Field> build_registry() {
  std::vector<Field> f;
  auto S = [](RunConfig& c) -> ScenarioConfig& { return c.env.scenario; };

  f.push_back({"scenario", "feeder", [](const RunConfig& c) { return c.env.scenario.feeder; },
               [](RunConfig& c, const std::string& v) { c.env.scenario.feeder = trim(v); }});
  f.push_back(optional_real("scenario", "source_voltage",
                            [S](RunConfig& c) -> auto& { return S(c).source_voltage; }, "feeder"));
  f.push_back(integer("scenario", "episode_len", [S](RunConfig& c) -> auto& { return S(c).episode_len; }));
  f.push_back(integer("scenario", "agent_period", [S](RunConfig& c) -> auto& { return S(c).agent_period; }));
  f.push_back(real("scenario", "pv_penetration", [S](RunConfig& c) -> auto& { return S(c).pv_penetration; }));
  f.push_back(real("scenario", "oversize", [S](RunConfig& c) -> auto& { return S(c).oversize; }));
  f.push_back(real("scenario", "load_variation", [S](RunConfig& c) -> auto& { return S(c).load_variation; }));
  f.push_back(real("scenario", "day_length_h", [S](RunConfig& c) -> auto& { return S(c).day_length_h; }));
  f.push_back(optional_real("scenario", "day_position_h",
                            [S](RunConfig& c) -> auto& { return S(c).day_position_h; }, "random"));
  f.push_back(integer("scenario", "seed", [S](RunConfig& c) -> auto& { return S(c).seed; }));

  f.push_back(real("attack", "fraction_min", [S](RunConfig& c) -> auto& { return S(c).attack_fraction_min; }));
  f.push_back(real("attack", "fraction_max", [S](RunConfig& c) -> auto& { return S(c).attack_fraction_max; }));
  f.push_back({"attack", "mode",
               [](const RunConfig& c) {
                 return std::string(c.env.scenario.attack_mode == AttackMode::kPerNode ? "per_node" : "global");
               },
               [](RunConfig& c, const std::string& v) {
                 const std::string t = trim(v);
                 if (t == "global") {
                   c.env.scenario.attack_mode = AttackMode::kGlobal;
                 } else if (t == "per_node") {
                   c.env.scenario.attack_mode = AttackMode::kPerNode;
                 } else {
                   throw ConfigError("attack.mode", "expected global or per_node, got '" + v + "'");
                 }
               }});
  f.push_back({"attack", "start",
               [](const RunConfig& c) {
                 const auto& s = c.env.scenario.attack_start;
                 return s ? std::to_string(*s) : std::string("random");
               },
               [](RunConfig& c, const std::string& v) {
                 const std::string t = trim(v);
                 if (t.empty() || t == "random") {
                   c.env.scenario.attack_start.reset();
                 } else {
                   c.env.scenario.attack_start = static_cast<int>(parse_int("attack.start", t));
                 }
               }});
  f.push_back(integer("attack", "duration", [S](RunConfig& c) -> auto& { return S(c).attack_duration; }));
  f.push_back(boolean("attack", "targeted", [S](RunConfig& c) -> auto& { return S(c).attack_targeted; }));
  f.push_back(real("attack", "margin", [S](RunConfig& c) -> auto& { return S(c).attack_margin; }));
  f.push_back(real("attack", "offset", [S](RunConfig& c) -> auto& { return S(c).attack_offset; }));
  f.push_back(real("attack", "slope", [S](RunConfig& c) -> auto& { return S(c).attack_slope; }));
  f.push_back(real("attack", "min_gap", [S](RunConfig& c) -> auto& { return S(c).attack_min_gap; }));

  f.push_back(real("inverter", "tau_m", [](RunConfig& c) -> auto& { return c.env.tau_m; }));
  f.push_back(real("inverter", "tau_o", [](RunConfig& c) -> auto& { return c.env.tau_o; }));
  f.push_back(real("inverter", "min_gap", [](RunConfig& c) -> auto& { return c.env.min_gap; }));
  f.push_back({"inverter", "eta",
               [](const RunConfig& c) {
                 std::string s;
                 for (double e : c.env.default_curve.eta) s += (s.empty() ? "" : ", ") + fmt_double(e);
                 return s;
               },
               [](RunConfig& c, const std::string& v) {
                 const auto items = split_list(v);
                 if (items.size() != 5) throw ConfigError("inverter.eta", "expected 5 breakpoints");
                 for (int k = 0; k < 5; ++k) c.env.default_curve.eta[k] = parse_double("inverter.eta", items[k]);
               }});

  f.push_back(real("detector", "f_hp", [](RunConfig& c) -> auto& { return c.env.detector.f_hp; }));
  f.push_back(real("detector", "f_lp", [](RunConfig& c) -> auto& { return c.env.detector.f_lp; }));
  f.push_back(real("detector", "gain", [](RunConfig& c) -> auto& { return c.env.detector.gain; }));
  f.push_back(real("detector", "dt", [](RunConfig& c) -> auto& { return c.env.detector.dt; }));

  f.push_back(integer("env", "history_n", [](RunConfig& c) -> auto& { return c.env.history_n; }));
  f.push_back(real("env", "action_range", [](RunConfig& c) -> auto& { return c.action_range; }));
  f.push_back(real("env", "action_step", [](RunConfig& c) -> auto& { return c.action_step; }));
  f.push_back({"env", "encoding",
               [](const RunConfig& c) {
                 return std::string(c.env.actions.encoding == ActionEncoding::kJoint ? "joint" : "factored");
               },
               [](RunConfig& c, const std::string& v) {
                 const std::string t = trim(v);
                 if (t == "factored") {
                   c.env.actions.encoding = ActionEncoding::kFactored;
                 } else if (t == "joint") {
                   c.env.actions.encoding = ActionEncoding::kJoint;
                 } else {
                   throw ConfigError("env.encoding", "expected factored or joint, got '" + v + "'");
                 }
               }});
  f.push_back({"env", "log_bus", [](const RunConfig& c) { return c.env.log_bus; },
               [](RunConfig& c, const std::string& v) { c.env.log_bus = trim(v); }});
  f.push_back(real("env", "pf_tolerance", [](RunConfig& c) -> auto& { return c.env.power_flow.tol; }));
  f.push_back(integer("env", "pf_max_iter", [](RunConfig& c) -> auto& { return c.env.power_flow.max_iter; }));

  f.push_back(real("reward", "sigma_y", [](RunConfig& c) -> auto& { return c.env.reward.sigma_y; }));
  f.push_back(real("reward", "sigma_a", [](RunConfig& c) -> auto& { return c.env.reward.sigma_a; }));
  f.push_back(real("reward", "sigma_0", [](RunConfig& c) -> auto& { return c.env.reward.sigma_0; }));
  f.push_back(real("reward", "sigma_p", [](RunConfig& c) -> auto& { return c.env.reward.sigma_p; }));
  f.push_back(real("reward", "p_max_eps", [](RunConfig& c) -> auto& { return c.env.reward.p_max_eps; }));

  auto A = [](RunConfig& c) -> AgentConfig& { return c.agent; };
  f.push_back(real("agent", "gamma", [A](RunConfig& c) -> auto& { return A(c).gamma; }));
  f.push_back(real("agent", "lambda", [A](RunConfig& c) -> auto& { return A(c).lambda; }));
  f.push_back(real("agent", "clip", [A](RunConfig& c) -> auto& { return A(c).clip; }));
  f.push_back(real("agent", "lr", [A](RunConfig& c) -> auto& { return A(c).lr; }));
  f.push_back(integer("agent", "batch", [A](RunConfig& c) -> auto& { return A(c).batch; }));
  f.push_back(integer("agent", "epochs", [A](RunConfig& c) -> auto& { return A(c).epochs; }));
  f.push_back(integer("agent", "minibatch", [A](RunConfig& c) -> auto& { return A(c).minibatch; }));
  f.push_back(real("agent", "entropy_coef", [A](RunConfig& c) -> auto& { return A(c).entropy_coef; }));
  f.push_back(boolean("agent", "entropy_decay", [A](RunConfig& c) -> auto& { return A(c).entropy_decay; }));
  f.push_back(real("agent", "value_coef", [A](RunConfig& c) -> auto& { return A(c).value_coef; }));
  f.push_back(real("agent", "max_grad_norm", [A](RunConfig& c) -> auto& { return A(c).max_grad_norm; }));
  f.push_back(boolean("agent", "normalize_advantages",
                      [A](RunConfig& c) -> auto& { return A(c).normalize_advantages; }));
  f.push_back({"agent", "hidden",
               [](const RunConfig& c) {
                 std::string s;
                 for (int h : c.agent.hidden) s += (s.empty() ? "" : ", ") + std::to_string(h);
                 return s;
               },
               [](RunConfig& c, const std::string& v) {
                 c.agent.hidden.clear();
                 for (const auto& item : split_list(v)) {
                   c.agent.hidden.push_back(static_cast<int>(parse_int("agent.hidden", item)));
                 }
               }});
  f.push_back(real("agent", "hidden_gain", [A](RunConfig& c) -> auto& { return A(c).hidden_gain; }));
  f.push_back(real("agent", "policy_output_gain", [A](RunConfig& c) -> auto& { return A(c).policy_output_gain; }));
  f.push_back(real("agent", "value_output_gain", [A](RunConfig& c) -> auto& { return A(c).value_output_gain; }));
  f.push_back(integer("agent", "iterations", [A](RunConfig& c) -> auto& { return A(c).iterations; }));
  f.push_back(integer("agent", "checkpoint_interval",
                      [A](RunConfig& c) -> auto& { return A(c).checkpoint_interval; }));
  f.push_back(integer("agent", "plateau_window", [A](RunConfig& c) -> auto& { return A(c).plateau_window; }));
  f.push_back(real("agent", "plateau_tol", [A](RunConfig& c) -> auto& { return A(c).plateau_tol; }));
  f.push_back(integer("agent", "threads", [A](RunConfig& c) -> auto& { return A(c).threads; }));
  f.push_back(boolean("agent", "deterministic", [A](RunConfig& c) -> auto& { return A(c).deterministic; }));
  f.push_back(boolean("agent", "log_energy", [A](RunConfig& c) -> auto& { return A(c).log_energy; }));
  f.push_back(real("agent", "energy_floor", [A](RunConfig& c) -> auto& { return A(c).energy_floor; }));

  f.push_back(boolean("eval", "null_policy", [](RunConfig& c) -> auto& { return c.eval.null_policy; }));
  f.push_back({"eval", "mode",
               [](const RunConfig& c) {
                 return std::string(c.eval.mode == PolicyMode::kLocal ? "local" : "aggregate");
               },
               [](RunConfig& c, const std::string& v) {
                 const std::string t = trim(v);
                 if (t == "local") {
                   c.eval.mode = PolicyMode::kLocal;
                 } else if (t == "aggregate") {
                   c.eval.mode = PolicyMode::kAggregate;
                 } else {
                   throw ConfigError("eval.mode", "expected local or aggregate, got '" + v + "'");
                 }
               }});
  f.push_back(integer("eval", "seed", [](RunConfig& c) -> auto& { return c.eval.seed; }));
  return f;
}

inline const std::vector<Field>& registry() {
  static const std::vector<Field> r = build_registry();
  return r;
}

inline const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : registry()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError(section + "." + key, "unknown configuration key");
}

}  // namespace config_detail

// Rebuilds the action grid and checks every section.
inline void finalize(RunConfig& c) {
  if (!(c.action_step > 0.0)) throw ConfigError("env.action_step", "must be positive");
  if (!(c.action_range >= 0.0)) throw ConfigError("env.action_range", "must be >= 0");
  const auto enc = c.env.actions.encoding;
  c.env.actions.offsets = ActionSpace::symmetric_grid(c.action_range, c.action_step);
  c.env.actions.slopes = ActionSpace::symmetric_grid(c.action_range, c.action_step);
  c.env.actions.encoding = enc;
  c.env.validate();
  c.agent.validate();
}

// Applies one `section.key=value` override.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError(assignment, "override must look like section.key=value");
  }
  const std::string section = config_detail::trim(assignment.substr(0, dot));
  const std::string key = config_detail::trim(assignment.substr(dot + 1, eq - dot - 1));
  config_detail::find_field(section, key).set(c, assignment.substr(eq + 1));
}

// Parses INI text on top of the defaults. Unknown sections or keys are
// errors. Does not call finalize().
inline RunConfig parse_config_text(const std::string& text, const std::string& base_dir = "",
                                   const std::string& source = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, static_cast<int>(e.line()), e.message());
  }
  RunConfig c;
  c.base_dir = base_dir;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "top-level keys must sit inside a [section]");
    for (const auto& [key, value] : body) {
      config_detail::find_field(section, key).set(c, value.get_value<std::string>());
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return parse_config_text(ss.str(), dir, path);
}

// Canonical INI text for a configuration; parsing it back yields the same
// configuration.
inline std::string to_ini(const RunConfig& c) {
  std::string out, section;
  for (const auto& f : config_detail::registry()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

// Loads the configured feeder; a feeder file without inverter sites gets one
// per load bus sized from the scenario's penetration and oversize.
inline std::shared_ptr<const FeederModel> load_run_feeder(const RunConfig& c) {
  if (c.env.scenario.feeder.empty()) throw ConfigError("scenario.feeder", "no feeder file given");
  const std::string path = c.feeder_path();
  if (!std::filesystem::exists(path)) {
    throw ConfigError("scenario.feeder", "feeder file not found: " + path);
  }
  const FeederModel raw = load_feeder(path);
  return std::make_shared<const FeederModel>(
      with_default_inverters(raw, c.env.scenario.pv_penetration, c.env.scenario.oversize));
}

}  // namespace droopguard
