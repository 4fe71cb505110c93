// droopguard: train, evaluate and inspect droop-curve defense agents.
//
// Exit codes: 0 success, 1 usage, 2 configuration or data error,
// 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "droopguard/agent.hpp"
#include "droopguard/config.hpp"
#include "droopguard/env.hpp"
#include "droopguard/errors.hpp"
#include "droopguard/feeder.hpp"
#include "droopguard/report.hpp"

#ifndef DROOPGUARD_PRESET_DIR
#define DROOPGUARD_PRESET_DIR "data/presets"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace droopguard;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("file", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Git blob id: sha1("blob <size>\0" + content).
std::string blob_hash(const std::string& path) {
  const std::string body = read_file(path);
  const std::string data = "blob " + std::to_string(body.size()) + '\0' + body;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 failed");
  }
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// A config argument is a file path or the name of a preset.
std::string resolve_config(const std::string& name, const std::string& preset_dir) {
  if (fs::is_regular_file(name)) return name;
  const fs::path p = fs::path(preset_dir) / (name + ".ini");
  if (fs::is_regular_file(p)) return p.string();
  throw ConfigError("config", "no config file or preset named '" + name + "' (looked in " + preset_dir + ")");
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  finalize(c);
  return c;
}

std::string default_out(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DROOPGUARD_OUT_DIR"); env && *env) return env;
  return fallback;
}

int default_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DROOPGUARD_THREADS"); env && *env) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("DROOPGUARD_THREADS", std::string("not an integer: ") + env);
    }
  }
  return 0;
}

struct Manifest {
  json doc;

  Manifest(const std::string& command, const std::string& config, std::uint64_t seed,
           const std::string& out_dir) {
    doc["command"] = command;
    doc["config"] = config;
    doc["seed"] = seed;
    doc["out_dir"] = out_dir;
    doc["inputs"] = json::object();
    doc["started"] = utc_now();
  }

  void input(const std::string& path) {
    if (!path.empty() && fs::is_regular_file(path)) doc["inputs"][path] = blob_hash(path);
  }

  void finish(const fs::path& dir) {
    doc["finished"] = utc_now();
    write_file(dir / "manifest.json", doc.dump(2) + "\n");
  }
};

std::string metrics_header() {
  return "iteration,episodes,transitions,failures,mean_return,mean_oscillation,entropy_coef,"
         "surrogate,value_loss,entropy,clip_fraction,approx_kl,aborted\n";
}

std::string metrics_row(const TrainPoint& p) {
  std::ostringstream os;
  os << p.iteration << "," << p.episodes << "," << p.transitions << "," << p.failures << ","
     << format_number(p.mean_return) << "," << format_number(p.mean_oscillation) << ","
     << format_number(p.entropy_coef) << "," << format_number(p.update.surrogate) << ","
     << format_number(p.update.value_loss) << "," << format_number(p.update.entropy) << ","
     << format_number(p.update.clip_fraction) << "," << format_number(p.update.approx_kl) << ","
     << (p.update.aborted ? 1 : 0) << "\n";
  return os.str();
}

// Keeps the header and the rows up to `iteration` (for resumption).
std::string truncate_metrics(const std::string& text, int iteration) {
  std::istringstream in(text);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    const int it = std::atoi(line.c_str());
    if (it >= 1 && it <= iteration) out += line + "\n";
  }
  return metrics_header() + out;
}

json summary_json(const EpisodeSummary& s, const EpisodeScenario& sc, const ActionSpace& space,
                  bool null_policy, PolicyMode mode) {
  auto terms = [](const RewardTerms& t) {
    json j;
    j["oscillation"] = -t.oscillation;
    j["action_change"] = -t.action_change;
    j["deviation"] = -t.deviation;
    j["curtailment"] = -t.curtailment;
    j["total"] = t.total();
    return j;
  };
  json j;
  j["policy"] = null_policy ? "null" : (mode == PolicyMode::kLocal ? "local" : "aggregate");
  j["attack"] = {{"start", s.attack_start},
                 {"end", s.attack_end},
                 {"compromised_fraction", sc.target_fraction},
                 {"compromised_inverters", sc.compromised_set().size()},
                 {"day_position_h", sc.day_start_h}};
  j["y"] = {{"before_mean", s.y_before_mean}, {"before_max", s.y_before_max},
            {"during_mean", s.y_during_mean}, {"during_max", s.y_during_max},
            {"after_mean", s.y_after_mean},   {"after_max", s.y_after_max},
            {"post_action_mean", s.y_post_action_mean}, {"first_decision", s.first_decision}};
  j["y_log_bus"] = {{"before_mean", s.log_bus_y_before_mean},
                    {"during_mean", s.log_bus_y_during_mean},
                    {"after_mean", s.log_bus_y_after_mean}};
  j["total_reward"] = s.total_reward;
  j["reward_terms"] = terms(s.terms);
  j["reward_terms_attack"] = terms(s.attack_terms);
  j["curtailment_energy"] = s.curtailment_energy;
  j["curtailment_energy_attack"] = s.curtailment_energy_attack;
  j["steps_to_null_after_attack"] = s.steps_to_null_after_attack;
  json acts = json::array();
  for (int a : s.log_unit_actions) acts.push_back({space.offset(a), space.slope(a)});
  j["log_unit_actions"] = acts;
  return j;
}

int cmd_train(const std::string& config_arg, const std::string& preset_dir,
              const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed_flag,
              const std::string& out_flag, int threads_flag, bool deterministic, int iterations,
              bool resume, bool quiet) {
  const std::string path = resolve_config(config_arg, preset_dir);
  RunConfig cfg = build_config(path, overrides);
  if (iterations >= 0) cfg.agent.iterations = iterations;
  if (const int t = default_threads(threads_flag); t > 0) cfg.agent.threads = t;
  if (deterministic) cfg.agent.deterministic = true;
  finalize(cfg);
  const std::uint64_t seed = seed_flag.value_or(cfg.env.scenario.seed);
  const fs::path out = default_out(out_flag, "runs/train-" + std::to_string(seed));
  fs::create_directories(out / "checkpoints");

  auto feeder = load_run_feeder(cfg);
  Manifest manifest("train", path, seed, out.string());
  manifest.input(path);
  manifest.input(cfg.feeder_path());

  Trainer trainer(feeder, cfg.env, cfg.agent, seed);
  const fs::path metrics_path = out / "metrics.csv";
  std::string metrics = metrics_header();
  if (resume && fs::exists(out / "checkpoint.bin")) {
    Checkpoint c = load_checkpoint((out / "checkpoint.bin").string());
    trainer.resume(std::move(c));
    if (fs::exists(metrics_path)) metrics = truncate_metrics(read_file(metrics_path.string()), trainer.state().iteration);
    if (!quiet) std::cerr << "resuming at iteration " << trainer.state().iteration << "\n";
  }
  trainer.state().config_ini = to_ini(cfg);
  write_file(out / "config.ini", trainer.state().config_ini);
  write_file(metrics_path, metrics);

  std::ofstream metrics_out(metrics_path, std::ios::app | std::ios::binary);
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(
      [&](const TrainPoint& p) {
        if (p.update.aborted) throw NumericalError("non-finite loss at iteration " + std::to_string(p.iteration));
        metrics_out << metrics_row(p);
        metrics_out.flush();
        if (!quiet && (p.iteration % 10 == 0 || p.iteration == cfg.agent.iterations)) {
          const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::fprintf(stderr, "iter %5d  return %9.2f  oscillation %9.2f  kl %8.5f  %7.1fs\n", p.iteration,
                       p.mean_return, p.mean_oscillation, p.update.approx_kl, el);
        }
      },
      [&](const Checkpoint& c) {
        char name[64];
        std::snprintf(name, sizeof name, "iter_%06d.bin", c.iteration);
        save_checkpoint((out / "checkpoints" / name).string(), c);
        save_checkpoint((out / "checkpoint.bin").string(), c);
      });
  manifest.finish(out);
  if (!quiet) std::cerr << "wrote " << (out / "checkpoint.bin").string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& preset_arg, const std::string& preset_dir,
             const std::vector<std::string>& overrides, const std::string& checkpoint_path,
             bool null_flag, std::optional<std::uint64_t> seed_flag, const std::string& out_flag,
             const std::string& mode_flag, bool quiet) {
  const std::string path = resolve_config(preset_arg, preset_dir);
  RunConfig cfg = build_config(path, overrides);
  if (!mode_flag.empty()) apply_override(cfg, "eval.mode=" + mode_flag);
  const bool null_policy = null_flag || cfg.eval.null_policy;
  const std::uint64_t seed = seed_flag.value_or(cfg.eval.seed);
  const fs::path out = default_out(out_flag, "runs/eval-" + fs::path(path).stem().string() + "-" + std::to_string(seed));

  Agent agent;
  if (!null_policy) {
    if (checkpoint_path.empty()) throw ConfigError("checkpoint", "eval needs --checkpoint or --null-policy");
    agent = load_checkpoint(checkpoint_path).agent;
    if (!(agent.actions.offsets == cfg.env.actions.offsets && agent.actions.slopes == cfg.env.actions.slopes)) {
      throw ConfigError("actions", "checkpoint action space (" + std::to_string(agent.actions.size()) +
                                       " actions) does not match the preset's (" +
                                       std::to_string(cfg.env.actions.size()) + " actions)");
    }
    cfg.env.actions.encoding = agent.actions.encoding;
  }
  fs::create_directories(out);
  Manifest manifest("eval", path, seed, out.string());
  manifest.input(path);
  manifest.input(cfg.feeder_path());
  manifest.input(checkpoint_path);

  auto feeder = load_run_feeder(cfg);
  Environment env(feeder, cfg.env);
  env.enable_logging(true);
  env.reset(seed);
  run_greedy(env, null_policy ? nullptr : &agent, cfg.eval.mode, null_policy);

  std::ostringstream episode, buses;
  write_episode_csv(episode, env.log());
  write_bus_csv(buses, env.log());
  write_file(out / "episode.csv", episode.str());
  write_file(out / "buses.csv", buses.str());
  const EpisodeSummary s = summarize(env.log());
  write_file(out / "summary.json",
             summary_json(s, env.scenario(), cfg.env.actions, null_policy, cfg.eval.mode).dump(2) + "\n");
  write_file(out / "config.ini", to_ini(cfg));
  manifest.finish(out);
  if (!quiet) {
    std::printf("total reward %.3f  y before %.3g during %.3g after %.3g  curtailment %.4g pu*s\n",
                s.total_reward, s.y_before_mean, s.y_during_mean, s.y_after_mean, s.curtailment_energy);
  }
  return kOk;
}

int cmd_plotdata(const std::string& csv, const std::string& out_flag, int every) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw ConfigError("episode", "cannot open " + csv);
  const EpisodeTable t = read_episode_csv(in, csv);
  const std::string out = out_flag.empty() ? (fs::path(csv).parent_path() / "plot").string() : out_flag;
  for (const auto& f : write_plotdata(t, out, every)) std::printf("%s\n", f.c_str());
  return kOk;
}

int cmd_validate_feeder(const std::string& path, double source_v) {
  if (!fs::exists(path)) throw ConfigError("feeder", "feeder file not found: " + path);
  const FeederModel m = load_feeder(path);
  const double vs = source_v > 0.0 ? source_v : m.slack_voltage();
  const auto sol = solve_power_flow(m, base_load_injections(m), vs);
  double vmin = 1e9, vmax = 0.0;
  std::size_t imin = 0;
  for (std::size_t b = 0; b < m.size(); ++b) {
    const double v = std::abs(sol.voltages[b]);
    if (v < vmin) {
      vmin = v;
      imin = b;
    }
    vmax = std::max(vmax, v);
  }
  std::printf("%s: %zu buses, %zu lines, %zu inverter sites (%.4f pu capacity)\n", path.c_str(), m.size(),
              m.lines().size(), m.inverters().size(), m.total_inverter_capacity());
  std::printf("base-load power flow: %d sweeps, residual %.2e, |V| in [%.5f, %.5f] pu, lowest at bus %s\n",
              sol.iterations, sol.residual, vmin, vmax, m.buses()[imin].id.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"droopguard: reinforcement-learning defense of inverter droop curves"};
  app.require_subcommand(1);
  std::string preset_dir = DROOPGUARD_PRESET_DIR;
  app.add_option("--preset-dir", preset_dir, "Directory searched for named presets");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "Train a policy");
  std::string train_config = "train_default";
  int threads = 0, iterations = -1;
  bool deterministic = false, resume = false;
  train->add_option("-c,--config", train_config, "Config file or preset name")->capture_default_str();
  train->add_option("--seed", seed, "Root seed (default: scenario.seed)");
  train->add_option("-o,--out", out_dir, "Output directory");
  train->add_option("--threads", threads, "Rollout threads")->check(CLI::PositiveNumber);
  train->add_option("--iterations", iterations, "Override agent.iterations")->check(CLI::NonNegativeNumber);
  train->add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible run");
  train->add_flag("--resume", resume, "Continue from OUT/checkpoint.bin");
  train->add_option("--set", overrides, "Override section.key=value")->take_all();

  auto* eval = app.add_subcommand("eval", "Run one evaluation episode");
  std::string eval_preset, checkpoint, mode;
  bool null_policy = false;
  eval->add_option("-p,--preset,--config", eval_preset, "Preset name or config file")->required();
  eval->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  eval->add_flag("--null-policy", null_policy, "Hold every inverter at the null action");
  eval->add_option("--seed", seed, "Scenario seed (default: eval.seed)");
  eval->add_option("-o,--out", out_dir, "Output directory");
  eval->add_option("--mode", mode, "local (per inverter) or aggregate")
      ->check(CLI::IsMember({"local", "aggregate"}));
  eval->add_option("--set", overrides, "Override section.key=value")->take_all();

  auto* plot = app.add_subcommand("plotdata", "Split an episode CSV into per-subplot files");
  std::string episode_csv;
  int every = 1;
  plot->add_option("episode", episode_csv, "Episode CSV from eval")->required();
  plot->add_option("-o,--out", out_dir, "Output directory (default: <episode dir>/plot)");
  plot->add_option("--every", every, "Keep every k-th row")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate-feeder", "Parse a feeder file and solve base-load power flow");
  std::string feeder_path;
  double source_v = 0.0;
  validate->add_option("feeder", feeder_path, "Feeder file")->required();
  validate->add_option("--source-voltage", source_v, "Slack voltage (default: from the file)");

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  std::string show_config;
  show->add_option("-c,--config", show_config, "Config file or preset name (default: built-in defaults)");
  show->add_option("--set", overrides, "Override section.key=value")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      return cmd_train(train_config, preset_dir, overrides, seed, out_dir, threads, deterministic, iterations,
                       resume, quiet);
    }
    if (*eval) return cmd_eval(eval_preset, preset_dir, overrides, checkpoint, null_policy, seed, out_dir, mode, quiet);
    if (*plot) return cmd_plotdata(episode_csv, out_dir, every);
    if (*validate) return cmd_validate_feeder(feeder_path, source_v);
    if (*show) {
      const std::string path = show_config.empty() ? "" : resolve_config(show_config, preset_dir);
      std::fputs(to_ini(build_config(path, overrides)).c_str(), stdout);
      return kOk;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kData;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kData;
  } catch (const TopologyError& e) {
    std::cerr << "feeder error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
