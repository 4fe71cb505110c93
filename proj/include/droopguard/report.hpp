#pragma once

// Episode logs as CSV, per-episode summary statistics, and the tidy
// per-subplot files produced by `plotdata`.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "droopguard/env.hpp"
#include "droopguard/errors.hpp"

namespace droopguard {

inline const std::vector<std::string>& episode_columns() {
  static const std::vector<std::string> cols{
      "step",          "v",           "y",           "translation",         "slope",
      "translation_adv", "slope_adv", "component_y", "component_oa",        "component_init",
      "component_pset_pmax", "total_reward"};
  return cols;
}

// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Mean detector output over the controllable buses at one tick.
inline double controllable_energy(const EpisodeLog& log, const TickRecord& tick) {
  double s = 0.0;
  for (auto b : log.controllable_buses) s += tick.energy[b];
  return log.controllable_buses.empty() ? 0.0 : s / static_cast<double>(log.controllable_buses.size());
}

// One row per tick. Action columns hold the deviation in force at the
// logged inverter; reward columns repeat the signed reward terms of the
// agent window containing the tick.
inline void write_episode_csv(std::ostream& out, const EpisodeLog& log) {
  const auto& cols = episode_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
  out << "\n";
  std::size_t w = 0;
  for (const auto& tk : log.ticks) {
    while (w + 1 < log.windows.size() && tk.step >= log.windows[w].end_step) ++w;
    double off = 0.0, slope = 0.0;
    RewardTerms terms;
    if (w < log.windows.size()) {
      const int a = log.windows[w].actions[log.log_unit];
      off = log.actions.offset(a);
      slope = log.actions.slope(a);
      terms = log.windows[w].terms;
    }
    const double row[] = {static_cast<double>(tk.step),
                          tk.voltage[log.log_bus],
                          tk.energy[log.log_bus],
                          off,
                          slope,
                          tk.attack_offset,
                          tk.attack_slope,
                          -terms.oscillation,
                          -terms.action_change,
                          -terms.deviation,
                          -terms.curtailment,
                          terms.total()};
    for (std::size_t k = 0; k < std::size(row); ++k) out << (k ? "," : "") << format_number(row[k]);
    out << "\n";
  }
}

// Voltage and detector output at every bus, one row per tick.
inline void write_bus_csv(std::ostream& out, const EpisodeLog& log) {
  out << "step";
  for (const auto& id : log.bus_ids) out << ",v_" << id;
  for (const auto& id : log.bus_ids) out << ",y_" << id;
  out << "\n";
  for (const auto& tk : log.ticks) {
    out << tk.step;
    for (double v : tk.voltage) out << "," << format_number(v);
    for (double y : tk.energy) out << "," << format_number(y);
    out << "\n";
  }
}

struct EpisodeSummary {
  int attack_start = 0;
  int attack_end = 0;
  // Controllable-bus mean detector output, split by the attack window.
  double y_before_mean = 0.0, y_before_max = 0.0;
  double y_during_mean = 0.0, y_during_max = 0.0;
  double y_after_mean = 0.0, y_after_max = 0.0;
  // Same quantity from the first agent decision at or after attack onset
  // until the attack ends.
  int first_decision = 0;
  double y_post_action_mean = 0.0;
  // At the logged bus.
  double log_bus_y_before_mean = 0.0, log_bus_y_during_mean = 0.0, log_bus_y_after_mean = 0.0;
  double total_reward = 0.0;
  RewardTerms terms;         // summed over windows
  RewardTerms attack_terms;  // windows overlapping the attack
  double curtailment_energy = 0.0;         // pu * s, whole episode
  double curtailment_energy_attack = 0.0;  // pu * s, from first decision to attack end
  // Agent windows after the attack ends until every controllable inverter is
  // within one bin of the null action (0 = already at the first decision
  // after the end); -1 if that never happens.
  int steps_to_null_after_attack = -1;
  std::vector<int> log_unit_actions;  // per window
};

inline bool near_null(const ActionSpace& s, int action) {
  const int n = s.null_action();
  return std::abs(s.offset_bin(action) - s.offset_bin(n)) <= 1 &&
         std::abs(s.slope_bin(action) - s.slope_bin(n)) <= 1;
}

inline EpisodeSummary summarize(const EpisodeLog& log) {
  EpisodeSummary s;
  s.attack_start = log.attack_start;
  s.attack_end = log.attack_end;
  s.first_decision = log.attack_end;
  for (const auto& w : log.windows) {
    if (w.start_step >= log.attack_start) {
      s.first_decision = w.start_step;
      break;
    }
  }
  struct Acc {
    double sum = 0.0, max = 0.0;
    int n = 0;
    void add(double y) {
      sum += y;
      max = std::max(max, y);
      ++n;
    }
    double mean() const { return n ? sum / n : 0.0; }
  } before, during, after, post, lb_before, lb_during, lb_after;
  for (const auto& tk : log.ticks) {
    const double y = controllable_energy(log, tk);
    const double yl = tk.energy[log.log_bus];
    if (tk.step < log.attack_start) {
      before.add(y);
      lb_before.add(yl);
    } else if (tk.step < log.attack_end) {
      during.add(y);
      lb_during.add(yl);
    } else {
      after.add(y);
      lb_after.add(yl);
    }
    if (tk.step >= s.first_decision && tk.step < log.attack_end) {
      post.add(y);
      s.curtailment_energy_attack += tk.curtailed_power;
    }
    s.curtailment_energy += tk.curtailed_power;
  }
  s.y_before_mean = before.mean();
  s.y_before_max = before.max;
  s.y_during_mean = during.mean();
  s.y_during_max = during.max;
  s.y_after_mean = after.mean();
  s.y_after_max = after.max;
  s.y_post_action_mean = post.mean();
  s.log_bus_y_before_mean = lb_before.mean();
  s.log_bus_y_during_mean = lb_during.mean();
  s.log_bus_y_after_mean = lb_after.mean();

  int after_index = -1;
  for (const auto& w : log.windows) {
    const RewardTerms& t = w.terms;
    s.total_reward += t.total();
    s.terms.oscillation += t.oscillation;
    s.terms.action_change += t.action_change;
    s.terms.deviation += t.deviation;
    s.terms.curtailment += t.curtailment;
    if (w.end_step > log.attack_start && w.start_step < log.attack_end) {
      s.attack_terms.oscillation += t.oscillation;
      s.attack_terms.action_change += t.action_change;
      s.attack_terms.deviation += t.deviation;
      s.attack_terms.curtailment += t.curtailment;
    }
    s.log_unit_actions.push_back(w.actions[log.log_unit]);
    if (w.start_step >= log.attack_end) {
      ++after_index;
      const bool all_null = std::all_of(w.actions.begin(), w.actions.end(),
                                        [&](int a) { return near_null(log.actions, a); });
      if (all_null && s.steps_to_null_after_attack < 0) s.steps_to_null_after_attack = after_index;
    }
  }
  return s;
}

// Parsed episode CSV: column names and numeric rows.
struct EpisodeTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t k = 0; k < columns.size(); ++k) {
      if (columns[k] == name) return k;
    }
    throw ParseError("episode CSV lacks column '" + name + "'");
  }
};

inline EpisodeTable read_episode_csv(std::istream& in, const std::string& source = "<episode>") {
  EpisodeTable t;
  std::string line;
  int lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.columns.empty()) {
      t.columns = split(line);
      if (t.columns != episode_columns()) {
        throw ParseError(source, lineno, "header does not match the episode schema");
      }
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != t.columns.size()) {
      throw ParseError(source, lineno, "expected " + std::to_string(t.columns.size()) + " fields");
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0.0;
      auto [end, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || end != c.data() + c.size()) {
        throw ParseError(source, lineno, "not a number: '" + c + "'");
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw ParseError(source, 0, "empty episode CSV");
  if (t.rows.empty()) throw ParseError(source, 0, "episode CSV has no data rows");
  return t;
}

// The four plot series: file name and the episode columns it carries.
inline const std::vector<std::pair<std::string, std::vector<std::string>>>& plot_files() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> files{
      {"voltage.csv", {"v"}},
      {"oscillation.csv", {"y"}},
      {"action.csv", {"translation", "slope", "translation_adv", "slope_adv"}},
      {"reward.csv",
       {"component_y", "component_oa", "component_init", "component_pset_pmax", "total_reward"}},
  };
  return files;
}

// Writes every `every`-th row (plus the last) of each series into `dir`.
// Output is assembled in memory first so a failure leaves nothing behind.
inline std::vector<std::string> write_plotdata(const EpisodeTable& t, const std::string& dir, int every = 1) {
  if (every < 1) throw ConfigError("every", "must be >= 1");
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < t.rows.size(); r += static_cast<std::size_t>(every)) keep.push_back(r);
  if (keep.back() != t.rows.size() - 1) keep.push_back(t.rows.size() - 1);

  const std::size_t step_col = t.column("step");
  std::vector<std::pair<std::string, std::string>> outputs;
  for (const auto& [name, cols] : plot_files()) {
    std::vector<std::size_t> idx;
    for (const auto& c : cols) idx.push_back(t.column(c));
    std::ostringstream os;
    os << "step";
    for (const auto& c : cols) os << "," << c;
    os << "\n";
    for (std::size_t r : keep) {
      os << format_number(t.rows[r][step_col]);
      for (std::size_t k : idx) os << "," << format_number(t.rows[r][k]);
      os << "\n";
    }
    outputs.emplace_back(name, os.str());
  }
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  for (const auto& [name, text] : outputs) {
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    written.push_back(path);
  }
  return written;
}

}  // namespace droopguard
