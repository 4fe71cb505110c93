#pragma once

// Radial feeder model, its text file format, and a backward/forward sweep
// power-flow solver for balanced positive-sequence networks.
//
// Feeder file grammar (line oriented, `#` starts a comment):
//
//   [slack]
//   <bus-id> <voltage-pu>
//   [bus]
//   <bus-id> <p_load-pu> <q_load-pu>
//   [line]
//   <from-bus-id> <to-bus-id> <r-pu> <x-pu>
//   [inverter]
//   <bus-id> <capacity-pu>
//
// Sections may appear in any order, but each record must sit in its section.
// Bus ids are arbitrary whitespace-free tokens.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "droopguard/errors.hpp"

namespace droopguard {

using Complex = std::complex<double>;

struct Bus {
  std::string id;
  double p_load = 0.0;
  double q_load = 0.0;
};

struct Line {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;
  double x = 0.0;

  Complex impedance() const { return {r, x}; }
};

struct InverterSite {
  std::size_t bus = 0;
  double capacity = 0.0;
};

// Validated radial network. The slack bus is always index 0. Construct through
// FeederModel::build (or load_feeder), which checks every invariant and
// derives the parent/child structure used by the sweep.
class FeederModel {
 public:
  static FeederModel build(std::vector<Bus> buses, std::vector<Line> lines,
                           std::vector<InverterSite> inverters,
                           double slack_voltage = 1.0);

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const std::vector<InverterSite>& inverters() const { return inverters_; }
  double slack_voltage() const { return slack_voltage_; }
  std::size_t size() const { return buses_.size(); }

  // Index of the line feeding each bus (undefined for the slack).
  std::size_t parent_line(std::size_t bus) const { return parent_line_[bus]; }
  std::size_t parent(std::size_t bus) const { return parent_[bus]; }
  // Buses in breadth-first order from the slack.
  const std::vector<std::size_t>& order() const { return order_; }

  std::size_t bus_index(const std::string& id) const;
  bool has_bus(const std::string& id) const { return index_.count(id) != 0; }

  double total_inverter_capacity() const {
    double total = 0.0;
    for (const auto& inv : inverters_) total += inv.capacity;
    return total;
  }

 private:
  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  std::vector<InverterSite> inverters_;
  double slack_voltage_ = 1.0;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> parent_line_;
  std::vector<std::size_t> order_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::size_t FeederModel::bus_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw TopologyError("unknown bus '" + id + "'");
  return it->second;
}

inline FeederModel FeederModel::build(std::vector<Bus> buses,
                                      std::vector<Line> lines,
                                      std::vector<InverterSite> inverters,
                                      double slack_voltage) {
  FeederModel m;
  const std::size_t n = buses.size();
  if (n < 2) throw TopologyError("feeder needs at least two buses");
  if (!(slack_voltage > 0.0) || !std::isfinite(slack_voltage)) {
    throw TopologyError("slack voltage must be positive");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.index_.emplace(buses[i].id, i).second) {
      throw TopologyError("duplicate bus '" + buses[i].id + "'");
    }
  }

  bool any_positive = false;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const Line& l = lines[k];
    const std::string name = "line " + std::to_string(k) + " (" +
                             (l.from < n ? buses[l.from].id : "?") + " - " +
                             (l.to < n ? buses[l.to].id : "?") + ")";
    if (l.from >= n || l.to >= n) throw TopologyError(name + " references a missing bus");
    if (l.from == l.to) throw TopologyError(name + " is a self loop");
    if (l.r < 0.0 || l.x < 0.0 || !std::isfinite(l.r) || !std::isfinite(l.x)) {
      throw TopologyError(name + " has a negative or non-finite impedance");
    }
    any_positive = any_positive || l.r > 0.0 || l.x > 0.0;
    adj[l.from].emplace_back(l.to, k);
    adj[l.to].emplace_back(l.from, k);
  }
  if (!any_positive) throw TopologyError("all line impedances are zero");

  for (const auto& inv : inverters) {
    if (inv.bus >= n) throw TopologyError("inverter references a missing bus");
    if (!(inv.capacity > 0.0)) {
      throw TopologyError("inverter at bus '" + buses[inv.bus].id +
                          "' must have positive capacity");
    }
  }

  // Breadth-first walk from the slack. Revisiting a bus means a cycle; an
  // unvisited bus means the graph is disconnected.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  m.parent_.assign(n, kNone);
  m.parent_line_.assign(n, kNone);
  std::vector<bool> seen(n, false);
  seen[0] = true;
  m.order_.push_back(0);
  for (std::size_t head = 0; head < m.order_.size(); ++head) {
    const std::size_t u = m.order_[head];
    for (auto [v, k] : adj[u]) {
      if (k == m.parent_line_[u]) continue;
      if (seen[v]) {
        throw TopologyError("line " + std::to_string(k) + " (" + buses[lines[k].from].id +
                            " - " + buses[lines[k].to].id + ") closes a cycle");
      }
      seen[v] = true;
      m.parent_[v] = u;
      m.parent_line_[v] = k;
      m.order_.push_back(v);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw TopologyError("bus '" + buses[i].id + "' is disconnected from the slack");
  }
  if (lines.size() != n - 1) {
    throw TopologyError("radial feeder with " + std::to_string(n) + " buses needs " +
                        std::to_string(n - 1) + " lines, got " + std::to_string(lines.size()));
  }

  m.buses_ = std::move(buses);
  m.lines_ = std::move(lines);
  m.inverters_ = std::move(inverters);
  m.slack_voltage_ = slack_voltage;
  return m;
}

namespace detail {

inline double parse_number(const std::string& tok, const std::string& source, int line) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(source, line, "expected a number, got '" + tok + "'");
  }
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

// Parses feeder text. `source` is used in error messages only.
inline FeederModel parse_feeder(std::istream& in, const std::string& source = "<feeder>") {
  struct RawLine {
    std::string from, to;
    double r, x;
    int line;
  };
  struct RawInverter {
    std::string bus;
    double s;
    int line;
  };

  std::vector<Bus> buses;
  std::vector<RawLine> raw_lines;
  std::vector<RawInverter> raw_inverters;
  std::string slack_id;
  double slack_v = 1.0;
  int slack_line = 0;

  std::string section;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    auto toks = detail::split_ws(text);
    if (toks.empty()) continue;
    if (toks[0].front() == '[') {
      if (toks.size() != 1 || toks[0].back() != ']') {
        throw ParseError(source, lineno, "malformed section header");
      }
      section = toks[0].substr(1, toks[0].size() - 2);
      if (section != "bus" && section != "line" && section != "inverter" && section != "slack") {
        throw ParseError(source, lineno, "unknown section [" + section + "]");
      }
      continue;
    }
    auto want = [&](std::size_t count) {
      if (toks.size() != count) {
        throw ParseError(source, lineno,
                         "[" + section + "] record needs " + std::to_string(count) + " fields");
      }
    };
    if (section.empty()) {
      throw ParseError(source, lineno, "record outside of any section");
    } else if (section == "bus") {
      want(3);
      buses.push_back({toks[0], detail::parse_number(toks[1], source, lineno),
                       detail::parse_number(toks[2], source, lineno)});
    } else if (section == "line") {
      want(4);
      raw_lines.push_back({toks[0], toks[1], detail::parse_number(toks[2], source, lineno),
                           detail::parse_number(toks[3], source, lineno), lineno});
    } else if (section == "inverter") {
      want(2);
      raw_inverters.push_back({toks[0], detail::parse_number(toks[1], source, lineno), lineno});
    } else {
      want(2);
      if (!slack_id.empty()) throw ParseError(source, lineno, "more than one slack record");
      slack_id = toks[0];
      slack_v = detail::parse_number(toks[1], source, lineno);
      slack_line = lineno;
    }
  }

  if (slack_id.empty()) throw ParseError(source, lineno, "missing [slack] record");
  auto slack_it = std::find_if(buses.begin(), buses.end(),
                               [&](const Bus& b) { return b.id == slack_id; });
  if (slack_it == buses.end()) {
    throw ParseError(source, slack_line, "slack bus '" + slack_id + "' is not declared in [bus]");
  }
  std::rotate(buses.begin(), slack_it, slack_it + 1);

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (!index.emplace(buses[i].id, i).second) {
      throw TopologyError("duplicate bus '" + buses[i].id + "'");
    }
  }
  auto lookup = [&](const std::string& id, int line, const char* what) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw TopologyError(source + ":" + std::to_string(line) + ": " + what +
                          " references undeclared bus '" + id + "'");
    }
    return it->second;
  };

  std::vector<Line> lines;
  for (const auto& rl : raw_lines) {
    lines.push_back({lookup(rl.from, rl.line, "line"), lookup(rl.to, rl.line, "line"), rl.r, rl.x});
  }
  std::vector<InverterSite> inverters;
  for (const auto& ri : raw_inverters) {
    inverters.push_back({lookup(ri.bus, ri.line, "inverter"), ri.s});
  }
  return FeederModel::build(std::move(buses), std::move(lines), std::move(inverters), slack_v);
}

inline FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feeder file '" + path + "'");
  return parse_feeder(in, path);
}

struct PowerFlowSolution {
  std::vector<Complex> voltages;
  int iterations = 0;
  double residual = 0.0;
};

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

// Backward/forward sweep. `injections` holds the net complex power injected
// at each bus (generation positive, load negative). The slack entry is
// ignored. `warm_start`, when non-empty, seeds the iteration.
//
// Each sweep computes injection currents from the present voltages,
// accumulates branch currents leaf to root, then updates voltages root to
// leaf. The residual is the largest |S_spec - V_new * conj(I_used)| over the
// non-slack buses, i.e. the power mismatch of the new voltages against the
// currents that produced them.
inline PowerFlowSolution solve_power_flow(const FeederModel& model,
                                          std::span<const Complex> injections,
                                          double source_v,
                                          PowerFlowOptions opts = {},
                                          std::span<const Complex> warm_start = {}) {
  const std::size_t n = model.size();
  if (injections.size() != n) {
    throw std::invalid_argument("injection vector size does not match the feeder");
  }
  if (!(opts.tol > 0.0) || opts.max_iter < 1) {
    throw std::invalid_argument("power flow needs tol > 0 and max_iter >= 1");
  }
  PowerFlowSolution sol;
  if (warm_start.size() == n) {
    sol.voltages.assign(warm_start.begin(), warm_start.end());
    sol.voltages[0] = Complex(source_v, 0.0);
  } else {
    sol.voltages.assign(n, Complex(source_v, 0.0));
  }

  const auto& order = model.order();
  std::vector<Complex> current(n);
  std::vector<Complex> branch(n);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    for (std::size_t i = 1; i < n; ++i) current[i] = std::conj(injections[i] / sol.voltages[i]);
    // branch[i]: current flowing from parent(i) into bus i.
    for (std::size_t i = 1; i < n; ++i) branch[i] = -current[i];
    for (std::size_t k = n - 1; k >= 1; --k) {
      const std::size_t bus = order[k];
      const std::size_t up = model.parent(bus);
      if (up != 0) branch[up] += branch[bus];
    }
    for (std::size_t k = 1; k < n; ++k) {
      const std::size_t bus = order[k];
      const Line& l = model.lines()[model.parent_line(bus)];
      sol.voltages[bus] = sol.voltages[model.parent(bus)] - l.impedance() * branch[bus];
    }

    double worst = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      worst = std::max(worst, std::abs(injections[i] - sol.voltages[i] * std::conj(current[i])));
    }
    sol.iterations = iter;
    sol.residual = worst;
    if (!std::isfinite(worst)) break;
    if (worst <= opts.tol) return sol;
  }
  std::ostringstream msg;
  msg << "power flow did not converge after " << sol.iterations
      << " sweeps (residual " << sol.residual << ")";
  throw NumericalError(msg.str());
}

// Net injections for the feeder's base loads scaled by `load_scale`.
inline std::vector<Complex> base_load_injections(const FeederModel& model, double load_scale = 1.0) {
  std::vector<Complex> s(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    s[i] = -load_scale * Complex(model.buses()[i].p_load, model.buses()[i].q_load);
  }
  return s;
}

}  // namespace droopguard
