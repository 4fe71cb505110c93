// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance                      fast criteria plus training (long)
//   acceptance --only 1,2,3         a subset
//   acceptance --checkpoint c.bin   judge criterion 7 on an existing policy
//
// Criterion 7 trains on the default preset for up to --train-minutes unless
// a checkpoint is given. Exit status is 0 only if every selected criterion
// passes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "droopguard/agent.hpp"
#include "droopguard/config.hpp"
#include "droopguard/report.hpp"
#include "oracles.hpp"

using namespace droopguard;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RunConfig preset(const std::string& name) {
  RunConfig c = load_config(std::string(DROOPGUARD_PRESET_DIR) + "/" + name + ".ini");
  finalize(c);
  return c;
}

Outcome power_flow_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(7, "random-feeders"));
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    std::vector<Complex> s;
    const auto m = oracles::random_feeder(rng, s);
    const auto sol = solve_power_flow(m, s, 1.0, {1e-10, 200});
    const auto ref = oracles::newton_solve(m, s, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      worst = std::max(worst, std::abs(std::abs(sol.voltages[i]) - std::abs(ref[i])));
    }
  }
  const double el = seconds_since(t0);
  return {worst <= 1e-6 && el < 30.0, fmt("worst |dV| %.2e pu over 200 feeders, %.2f s", worst, el)};
}

Outcome droop_laws() {
  const DroopCurve c;
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) bad.push_back(what);
  };
  expect(volt_watt(c, 0.9, 0.8) == 0.8, "VW below ramp");
  expect(volt_watt(c, c.eta[3], 0.8) == 0.8, "VW ramp start");
  expect(std::abs(volt_watt(c, 0.5 * (c.eta[3] + c.eta[4]), 0.8) - 0.4) < 1e-12, "VW midpoint");
  expect(volt_watt(c, c.eta[4], 0.8) == 0.0, "VW ramp end");
  expect(volt_watt(c, 1.2, 0.8) == 0.0, "VW above ramp");
  expect(volt_var(c, 0.9, 0.3) == 0.3, "VV low");
  expect(volt_var(c, c.eta[0], 0.3) == 0.3, "VV low ramp start");
  expect(std::abs(volt_var(c, 0.5 * (c.eta[0] + c.eta[1]), 0.3) - 0.15) < 1e-12, "VV low midpoint");
  expect(volt_var(c, c.eta[1], 0.3) == 0.0, "VV deadband start");
  expect(volt_var(c, 1.0, 0.3) == 0.0, "VV deadband");
  expect(volt_var(c, c.eta[2], 0.3) == 0.0, "VV deadband end");
  expect(std::abs(volt_var(c, 0.5 * (c.eta[2] + c.eta[3]), 0.3) + 0.15) < 1e-12, "VV high midpoint");
  expect(volt_var(c, c.eta[3], 0.3) == -0.3, "VV high ramp end");
  expect(volt_var(c, 1.2, 0.3) == -0.3, "VV high");
  const double h = var_headroom(1.1, 1.0);
  expect(std::abs(h - 0.458) < 5e-4 && std::abs(h - std::sqrt(0.21)) < 1e-15, "headroom 0.458");
  expect(var_headroom(0.7, 0.7) == 0.0 && var_headroom(0.7, 0.0) == 0.7, "headroom limits");

  // Equilibrium under constant input, over a spread of voltages.
  double worst = 0.0;
  for (double v = 0.9; v <= 1.15; v += 0.005) {
    InverterState st;
    st.tau_m = st.tau_o = 0.7;
    st.s = 1.1;
    st.p_max = 1.0;
    for (int k = 0; k < 400; ++k) st = step_inverter(st, v);
    const auto target = droop_setpoint(st.curve, v, st.s, st.p_max);
    worst = std::max({worst, std::abs(st.p - target.p), std::abs(st.q - target.q)});
  }
  expect(worst <= 1e-9, "equilibrium");
  std::string d = fmt("headroom %.6f, equilibrium error %.1e", h, worst);
  for (const auto& b : bad) d += "; failed: " + b;
  return {bad.empty(), d};
}

Outcome detector_analytics() {
  DetectorParams p;
  OscillationFilter f(p);
  double y0 = 0.0;
  for (int t = 0; t < 10000; ++t) y0 = f.step(1.0);
  double worst_rel = 0.0;
  for (double freq : {0.2, 0.25, 0.4}) {
    const double amp = 0.004, expect = p.gain * amp * amp / 2.0;
    worst_rel = std::max(worst_rel, std::abs(oracles::sine_energy(p, amp, freq) - expect) / expect);
  }
  const double off = std::abs(oracles::sine_energy(p, 0.003, 0.3, 1.0) - oracles::sine_energy(p, 0.003, 0.3, 0.95));
  const double base = oracles::sine_energy(p, 0.002, 0.3);
  double worst_scale = 0.0;
  for (double a : {0.5, 2.0, 4.0}) {
    worst_scale = std::max(worst_scale, std::abs(oracles::sine_energy(p, 0.002 * a, 0.3) / base / (a * a) - 1.0));
  }
  return {y0 < 1e-9 && worst_rel <= 0.05 && off <= 1e-6 && worst_scale <= 0.01,
          fmt("constant y %.1e, sinusoid err %.2f%%, offset diff %.1e, scaling err %.3f%%", y0, 100 * worst_rel,
              off, 100 * worst_scale)};
}

Outcome instability() {
  const RunConfig cfg = preset("eval_45pct_noact");
  const auto t0 = std::chrono::steady_clock::now();
  Environment env(load_run_feeder(cfg), cfg.env);
  env.enable_logging(true);
  env.reset(cfg.eval.seed);
  run_greedy(env, nullptr, PolicyMode::kLocal, true);
  const double el = seconds_since(t0);
  const EpisodeSummary s = summarize(env.log());
  const double ratio = s.y_during_mean / std::max(s.y_before_mean, 1e-12);
  const double share = s.terms.oscillation / -s.terms.total();
  // Sustained: the last agent window of the attack still oscillates.
  double tail = 0.0;
  int n = 0;
  for (const auto& tk : env.log().ticks) {
    if (tk.step >= s.attack_end - 35 && tk.step < s.attack_end) {
      tail += controllable_energy(env.log(), tk);
      ++n;
    }
  }
  tail /= std::max(n, 1);
  return {ratio >= 10.0 && share > 0.95 && tail > 10.0 * s.y_before_mean && el < 10.0,
          fmt("y during %.3g vs before %.3g (x%.3g), late-window y %.3g, oscillation share %.2f%%, %.2f s",
              s.y_during_mean, s.y_before_mean, ratio, tail, 100 * share, el)};
}

Outcome reward_arithmetic() {
  const RewardWeights w;
  InverterWindow u;
  const double r0 = compute_reward(w, std::span(&u, 1)).total();
  u.y = 1.0;
  const double r1 = compute_reward(w, std::span(&u, 1)).total();
  u = {};
  u.action_changed = true;
  u.deviation_norm = curve_deviation_norm(apply_action(DroopCurve{}, 0.05, 0.0), DroopCurve{});
  const double r2 = compute_reward(w, std::span(&u, 1)).total();
  const double expect2 = -(0.05 + 18.0 * 0.05 * std::sqrt(5.0));
  const bool weights = w.sigma_y == 15.0 && w.sigma_a == 0.05 && w.sigma_0 == 18.0 && w.sigma_p == 80.0;
  return {weights && r0 == 0.0 && r1 == -15.0 && std::abs(r2 - expect2) < 1e-12 && std::abs(r2 + 2.062) < 1e-3,
          fmt("%.1f, %.1f, %.6f", r0 + 0.0, r1, r2)};
}

Outcome ppo_correctness() {
  double worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    oracles::PpoFixture f(seed);
    const PpoCoefficients k{0.1, 0.5, 0.01};
    std::vector<double> gp(f.ac.policy.parameter_count(), 0.0), gv(f.ac.value.parameter_count(), 0.0);
    ppo_loss(f.ac, f.batch, f.idx, f.adv, f.ret, k, &gp, &gv);
    const double h = 1e-5;
    auto check = [&](auto&& params, const std::vector<double>& grad) {
      for (std::size_t j = 0; j < grad.size(); ++j) {
        ActorCritic up = f.ac, dn = f.ac;
        params(up)[j] += h;
        params(dn)[j] -= h;
        const double fd = (oracles::loss_at(up, f, k) - oracles::loss_at(dn, f, k)) / (2 * h);
        worst = std::max(worst, std::abs(grad[j] - fd) / std::max(1e-3, std::abs(fd)));
      }
    };
    check([](ActorCritic& a) -> std::vector<double>& { return a.policy.params(); }, gp);
    check([](ActorCritic& a) -> std::vector<double>& { return a.value.params(); }, gv);
  }

  oracles::PpoFixture f(5);
  for (auto& tr : f.batch) tr.log_prob = joint_log_prob(f.ac.distribution(tr.features), tr.choice);
  const auto l = ppo_loss(f.ac, f.batch, f.idx, f.adv, f.ret, {0.1, 0.5, 0.0});
  double mean_adv = 0.0;
  for (double a : f.adv) mean_adv += a / static_cast<double>(f.adv.size());
  const double surrogate_err = std::abs(l.surrogate - mean_adv);

  Rng rng(21);
  double gae_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    const int episodes = 1 + static_cast<int>(rng.index(4));
    for (int e = 0; e < episodes; ++e) {
      for (int t = 0; t < 20; ++t) {
        r.push_back(-15.0 * rng.uniform());
        v.push_back(rng.normal());
        d.push_back(t == 19 ? 1 : 0);
      }
    }
    const double gamma = rng.uniform(), lambda = rng.uniform();
    const auto g = compute_gae(r, v, d, gamma, lambda);
    const auto ref = oracles::brute_gae(r, v, d, gamma, lambda);
    for (std::size_t t = 0; t < r.size(); ++t) gae_err = std::max(gae_err, std::abs(g.advantages[t] - ref[t]));
  }
  return {worst < 1e-4 && l.clip_fraction == 0.0 && surrogate_err < 1e-12 && gae_err <= 1e-12,
          fmt("gradient rel err %.1e, clip fraction %.0f, surrogate err %.1e, GAE err %.1e", worst,
              l.clip_fraction, surrogate_err, gae_err)};
}

// Held-out evaluation of a policy against the null policy on one scenario.
struct HeldOut {
  EpisodeSummary baseline, policy;
};

HeldOut evaluate(const Agent& agent, const RunConfig& cfg, std::shared_ptr<const FeederModel> feeder,
                 std::uint64_t seed) {
  Environment env(std::move(feeder), cfg.env);
  env.enable_logging(true);
  HeldOut h;
  env.reset(seed);
  run_greedy(env, nullptr, cfg.eval.mode, true);
  h.baseline = summarize(env.log());
  env.reset(seed);
  run_greedy(env, &agent, cfg.eval.mode, false);
  h.policy = summarize(env.log());
  return h;
}

// A scenario counts as mitigated when the post-decision energy falls by 80%
// relative to no defense. Scenarios whose undefended baseline never leaves
// the pre-attack level only need to not be made worse.
bool mitigated(const HeldOut& h) {
  const double floor = std::max(1e-3, 10.0 * h.baseline.y_before_mean);
  if (h.baseline.y_post_action_mean <= floor) return h.policy.y_post_action_mean <= floor;
  return h.policy.y_post_action_mean <= 0.2 * h.baseline.y_post_action_mean;
}

Agent train_policy(const std::string& out, double minutes, int max_iterations, std::uint64_t seed, bool quiet) {
  RunConfig cfg = preset("train_default");
  if (max_iterations > 0) cfg.agent.iterations = max_iterations;
  if (const char* t = std::getenv("DROOPGUARD_THREADS")) cfg.agent.threads = std::max(1, std::atoi(t));
  Trainer trainer(load_run_feeder(cfg), cfg.env, cfg.agent, seed);
  trainer.state().config_ini = to_ini(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.state().iteration < cfg.agent.iterations && seconds_since(t0) < 60.0 * minutes) {
    const TrainPoint p = trainer.iterate();
    if (!quiet && p.iteration % 50 == 0) {
      std::fprintf(stderr, "  train iter %d  return %.2f  %.0f s\n", p.iteration, p.mean_return, seconds_since(t0));
    }
  }
  if (!out.empty()) {
    fs::create_directories(out);
    save_checkpoint((fs::path(out) / "checkpoint.bin").string(), trainer.state());
  }
  return trainer.state().agent;
}

Outcome training_efficacy(const Agent& agent) {
  RunConfig cfg = preset("train_default");
  const auto feeder = load_run_feeder(cfg);
  int ok_a = 0, ok_c = 0;
  std::ostringstream detail;
  const int n = 20;
  for (int k = 0; k < n; ++k) {
    RunConfig c = cfg;
    const double frac = 0.15 + 0.35 * k / (n - 1);
    c.env.scenario.attack_fraction_min = c.env.scenario.attack_fraction_max = frac;
    const HeldOut h = evaluate(agent, c, feeder, derive_seed(2024, "held-out", static_cast<std::uint64_t>(k)));
    const int back = h.policy.steps_to_null_after_attack;
    ok_a += mitigated(h);
    ok_c += back >= 0 && back <= 2;
  }
  const RunConfig morning = preset("eval_20pct_9am");
  const HeldOut m = evaluate(agent, morning, load_run_feeder(morning), morning.eval.seed);
  const bool b = mitigated(m) && m.policy.curtailment_energy_attack == 0.0;
  const bool pass = ok_a >= 16 && b && ok_c >= 16;
  return {pass, fmt("(a) %d/20 mitigated, (b) morning y %.3g vs %.3g with curtailment %.3g pu*s, (c) %d/20 "
                    "back near null within 3 steps",
                    ok_a, m.policy.y_post_action_mean, m.baseline.y_post_action_mean,
                    m.policy.curtailment_energy_attack, ok_c)};
}

Outcome determinism() {
  auto run = [] {
    RunConfig cfg = preset("train_default");
    cfg.agent.batch = 40;
    cfg.agent.minibatch = 20;
    cfg.agent.iterations = 3;
    cfg.agent.deterministic = true;
    cfg.agent.threads = 2;
    Trainer t(load_run_feeder(cfg), cfg.env, cfg.agent, 17);
    t.run();
    std::ostringstream ck;
    write_checkpoint(ck, t.state());
    const RunConfig ev = preset("eval_45pct_noon");
    Environment env(load_run_feeder(ev), ev.env);
    env.enable_logging(true);
    env.reset(ev.eval.seed);
    run_greedy(env, &t.state().agent, PolicyMode::kLocal, false);
    std::ostringstream csv;
    write_episode_csv(csv, env.log());
    return std::make_pair(ck.str(), csv.str());
  };
  const auto a = run(), b = run();
  return {a == b, fmt("checkpoint %zu bytes %s, episode log %zu bytes %s", a.first.size(),
                      a.first == b.first ? "identical" : "DIFFER", a.second.size(),
                      a.second == b.second ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only, checkpoint, out;
  double minutes = 110.0;
  int iterations = 0;
  std::uint64_t seed = 1;
  bool quiet = false;
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--checkpoint", checkpoint, "Policy to judge for criterion 7 instead of training");
  app.add_option("--train-minutes", minutes, "Wall-clock training budget for criterion 7");
  app.add_option("--iterations", iterations, "Iteration cap for criterion 7 training (0 = preset)");
  app.add_option("--seed", seed, "Training seed for criterion 7");
  app.add_option("-o,--out", out, "Directory for the criterion 7 checkpoint");
  app.add_flag("-q,--quiet", quiet);
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (only.empty()) {
    for (int k = 1; k <= 8; ++k) selected.insert(k);
  } else {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"power-flow oracle equivalence", power_flow_oracle},
      {"droop-law unit suite", droop_laws},
      {"detector analytics", detector_analytics},
      {"instability reproduction", instability},
      {"reward arithmetic", reward_arithmetic},
      {"PPO correctness", ppo_correctness},
      {"training efficacy",
       [&] {
         const Agent agent = checkpoint.empty() ? train_policy(out, minutes, iterations, seed, quiet)
                                                : load_checkpoint(checkpoint).agent;
         return training_efficacy(agent);
       }},
      {"determinism", determinism},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
