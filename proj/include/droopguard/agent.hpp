#pragma once

// PPO learner: categorical policy and state-value networks, generalized
// advantage estimation, clipped-surrogate updates, rollout collection and a
// versioned binary checkpoint.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <exception>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "droopguard/env.hpp"
#include "droopguard/errors.hpp"
#include "droopguard/nn.hpp"
#include "droopguard/rng.hpp"

namespace droopguard {

struct AgentConfig {
  double gamma = 0.5;
  double lambda = 0.95;
  double clip = 0.1;
  double lr = 1e-3;
  int batch = 420;
  int epochs = 4;
  int minibatch = 105;
  double entropy_coef = 0.01;
  bool entropy_decay = true;  // linear to 0 over `iterations`
  double value_coef = 0.5;
  double max_grad_norm = 0.5;  // 0 disables clipping
  bool normalize_advantages = true;
  std::vector<int> hidden{64, 64, 32};
  double hidden_gain = std::sqrt(2.0);
  double policy_output_gain = 0.01;
  double value_output_gain = 1.0;
  int iterations = 400;
  int checkpoint_interval = 25;
  // Stop when the moving-average return over this many iterations has not
  // improved by plateau_tol for as many iterations; 0 disables.
  int plateau_window = 0;
  double plateau_tol = 1e-3;
  int threads = 1;
  bool deterministic = false;
  // Energy features enter the networks as log10(y + floor) rescaled; with
  // log_energy = false they pass through unchanged.
  bool log_energy = true;
  double energy_floor = 1e-4;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma", "must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda", "must lie in [0, 1]");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("clip", "must lie in (0, 1)");
    if (!(lr > 0.0)) throw ConfigError("lr", "must be positive");
    if (batch < 1) throw ConfigError("batch", "must be >= 1");
    if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
    if (minibatch < 1 || minibatch > batch) throw ConfigError("minibatch", "must lie in [1, batch]");
    if (!(entropy_coef >= 0.0)) throw ConfigError("entropy_coef", "must be >= 0");
    if (!(value_coef >= 0.0)) throw ConfigError("value_coef", "must be >= 0");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm", "must be >= 0");
    if (hidden.empty()) throw ConfigError("hidden", "need at least one hidden layer");
    for (int h : hidden) {
      if (h < 1) throw ConfigError("hidden", "layer widths must be positive");
    }
    if (iterations < 0) throw ConfigError("iterations", "must be >= 0");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval", "must be >= 1");
    if (plateau_window < 0) throw ConfigError("plateau_window", "must be >= 0");
    if (threads < 1) throw ConfigError("threads", "must be >= 1");
    if (!(energy_floor > 0.0)) throw ConfigError("energy_floor", "must be positive");
  }
};

// Maps an environment observation to network input:
// [energy(y_mean), energy(y_max), q_avail_nom / capacity, one-hot(prev)].
// Headroom is taken relative to the rating so per-inverter inputs in
// deployment share the scale of the aggregate training input.
struct ObservationTransform {
  bool log_energy = true;
  double energy_floor = 1e-4;

  double energy(double y) const {
    if (!log_energy) return y;
    const double decades = -std::log10(energy_floor);
    return (std::log10(y + energy_floor) + decades) / decades;
  }

  std::vector<double> operator()(const Observation& o) const {
    std::vector<double> f = o.features();
    f[0] = energy(o.y_mean);
    f[1] = energy(o.y_max);
    f[2] = o.capacity > 0.0 ? o.q_avail_nom / o.capacity : 0.0;
    return f;
  }

  bool operator==(const ObservationTransform&) const = default;
};

// Policy network with one or more categorical heads over a shared trunk,
// and a separate value network.
struct ActorCritic {
  Mlp policy;
  Mlp value;
  std::vector<int> heads;

  static ActorCritic create(int input, const std::vector<int>& hidden, std::vector<int> heads,
                            Rng& rng, double hidden_gain = std::sqrt(2.0),
                            double policy_gain = 0.01, double value_gain = 1.0) {
    ActorCritic ac;
    ac.heads = std::move(heads);
    std::vector<int> pw{input};
    pw.insert(pw.end(), hidden.begin(), hidden.end());
    std::vector<int> vw = pw;
    pw.push_back(std::accumulate(ac.heads.begin(), ac.heads.end(), 0));
    vw.push_back(1);
    ac.policy = Mlp(pw);
    ac.value = Mlp(vw);
    ac.policy.init_orthogonal(rng, hidden_gain, policy_gain);
    ac.value.init_orthogonal(rng, hidden_gain, value_gain);
    return ac;
  }

  int input_size() const { return policy.input_size(); }

  // Per-head log-probabilities from the flat logit vector.
  std::vector<std::vector<double>> head_log_probs(std::span<const double> logits) const {
    std::vector<std::vector<double>> out;
    std::size_t at = 0;
    for (int h : heads) {
      out.push_back(log_softmax(logits.subspan(at, static_cast<std::size_t>(h))));
      at += static_cast<std::size_t>(h);
    }
    return out;
  }

  std::vector<std::vector<double>> distribution(std::span<const double> features) const {
    return head_log_probs(policy.forward(features));
  }

  double state_value(std::span<const double> features) const { return value.forward(features)[0]; }
};

inline double joint_log_prob(const std::vector<std::vector<double>>& log_p, std::span<const int> choice) {
  double s = 0.0;
  for (std::size_t h = 0; h < log_p.size(); ++h) s += log_p[h][static_cast<std::size_t>(choice[h])];
  return s;
}

inline std::vector<int> sample_heads(const std::vector<std::vector<double>>& log_p, Rng& rng) {
  std::vector<int> out;
  for (const auto& lp : log_p) {
    double u = rng.uniform();
    int k = 0;
    for (; k + 1 < static_cast<int>(lp.size()); ++k) {
      u -= std::exp(lp[static_cast<std::size_t>(k)]);
      if (u < 0.0) break;
    }
    out.push_back(k);
  }
  return out;
}

inline std::vector<int> greedy_heads(const std::vector<std::vector<double>>& log_p) {
  std::vector<int> out;
  for (const auto& lp : log_p) {
    out.push_back(static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin()));
  }
  return out;
}

struct Transition {
  std::vector<double> features;
  std::vector<int> choice;  // per head
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;  // last transition of its episode
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma V_{t+1} - V_t, with V_{t+1} = 0 past an episode end
// (or `bootstrap` past the final element when it is not an end).
// A_t = delta_t + gamma lambda A_{t+1} within an episode; returns = A + V.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> done, double gamma, double lambda,
                             double bootstrap = 0.0) {
  const std::size_t n = rewards.size();
  if (values.size() != n || done.size() != n) {
    throw std::invalid_argument("rewards, values and done flags must align");
  }
  GaeResult g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (std::size_t t = n; t-- > 0;) {
    if (done[t]) {
      next_adv = 0.0;
      next_value = 0.0;
    }
    const double delta = rewards[t] + gamma * next_value - values[t];
    g.advantages[t] = delta + gamma * lambda * next_adv;
    g.returns[t] = g.advantages[t] + values[t];
    next_adv = g.advantages[t];
    next_value = values[t];
  }
  return g;
}

struct PpoCoefficients {
  double clip = 0.1;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
};

struct LossParts {
  double surrogate = 0.0;   // mean clipped surrogate (to be maximized)
  double value_loss = 0.0;  // mean squared error against returns
  double entropy = 0.0;     // mean summed head entropy
  double clip_fraction = 0.0;
  double approx_kl = 0.0;   // mean of old minus new log-probability
  double total = 0.0;       // -surrogate + value_coef * value_loss - entropy_coef * entropy
};

// Loss over the samples `idx` of `batch`. When grad buffers are given, adds
// d(total)/d(params) for each network.
inline LossParts ppo_loss(const ActorCritic& ac, std::span<const Transition> batch,
                          std::span<const std::size_t> idx, std::span<const double> advantages,
                          std::span<const double> returns, const PpoCoefficients& k,
                          std::vector<double>* grad_policy = nullptr,
                          std::vector<double>* grad_value = nullptr) {
  LossParts out;
  const double m = static_cast<double>(idx.size());
  if (idx.empty()) return out;
  Mlp::Cache cache;
  for (std::size_t i : idx) {
    const Transition& tr = batch[i];
    const double adv = advantages[i];

    const auto logits = ac.policy.forward(tr.features, grad_policy ? &cache : nullptr);
    const auto log_p = ac.head_log_probs(logits);
    const double lp = joint_log_prob(log_p, tr.choice);
    const double ratio = std::exp(lp - tr.log_prob);
    const double clipped = std::clamp(ratio, 1.0 - k.clip, 1.0 + k.clip);
    const bool clip_active = (adv > 0.0 && ratio > 1.0 + k.clip) || (adv < 0.0 && ratio < 1.0 - k.clip);
    out.surrogate += std::min(ratio * adv, clipped * adv);
    if (std::abs(ratio - 1.0) > k.clip) out.clip_fraction += 1.0;
    out.approx_kl += tr.log_prob - lp;
    double h_total = 0.0;
    for (const auto& hp : log_p) h_total += entropy_of(hp);
    out.entropy += h_total;

    if (grad_policy) {
      // d(total)/d(logit) per head: surrogate part -adv * ratio * (onehot - p)
      // when unclipped, entropy part -coef * (-p (log p + H_head)).
      std::vector<double> d(logits.size(), 0.0);
      const double g_lp = clip_active ? 0.0 : -adv * ratio / m;
      std::size_t at = 0;
      for (std::size_t h = 0; h < log_p.size(); ++h) {
        const double h_head = entropy_of(log_p[h]);
        for (std::size_t j = 0; j < log_p[h].size(); ++j) {
          const double p = std::exp(log_p[h][j]);
          const double onehot = static_cast<int>(j) == tr.choice[h] ? 1.0 : 0.0;
          d[at + j] = g_lp * (onehot - p) + k.entropy_coef / m * p * (log_p[h][j] + h_head);
        }
        at += log_p[h].size();
      }
      ac.policy.backward(cache, d, *grad_policy);
    }

    const double v = ac.value.forward(tr.features, grad_value ? &cache : nullptr)[0];
    const double err = v - returns[i];
    out.value_loss += err * err;
    if (grad_value) {
      const double d = k.value_coef * 2.0 * err / m;
      ac.value.backward(cache, std::span<const double>(&d, 1), *grad_value);
    }
  }
  out.surrogate /= m;
  out.value_loss /= m;
  out.entropy /= m;
  out.clip_fraction /= m;
  out.approx_kl /= m;
  out.total = -out.surrogate + k.value_coef * out.value_loss - k.entropy_coef * out.entropy;
  return out;
}

struct UpdateMetrics {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  bool aborted = false;
};

struct PpoSettings {
  PpoCoefficients coef;
  int epochs = 4;
  int minibatch = 105;
  bool normalize_advantages = true;
  double max_grad_norm = 0.5;
};

inline void clip_gradient(std::vector<double>& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = l2_norm(g);
  if (n > max_norm) {
    for (auto& x : g) x *= max_norm / n;
  }
}

// Several epochs of minibatch steps on the clipped objective. Metrics are
// averages over all minibatches, each evaluated before its own step. A
// non-finite loss or gradient restores the parameters and optimizer state
// from before the call and marks the result aborted.
inline UpdateMetrics ppo_update(ActorCritic& ac, Adam& opt_policy, Adam& opt_value,
                                std::span<const Transition> batch, std::span<const double> advantages,
                                std::span<const double> returns, const PpoSettings& s, Rng& rng) {
  UpdateMetrics out;
  if (batch.empty()) return out;
  const ActorCritic saved = ac;
  const Adam saved_p = opt_policy, saved_v = opt_value;

  std::vector<double> adv(advantages.begin(), advantages.end());
  if (s.normalize_advantages && adv.size() > 1) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(adv.size()));
    for (auto& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int steps = 0;
  for (int epoch = 0; epoch < s.epochs; ++epoch) {
    // Fisher-Yates with the run's own generator (std::shuffle's algorithm
    // is implementation-defined).
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.index(i)]);
    }
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(s.minibatch)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(s.minibatch));
      std::span<const std::size_t> idx(order.data() + at, end - at);
      std::vector<double> gp(ac.policy.parameter_count(), 0.0), gv(ac.value.parameter_count(), 0.0);
      const LossParts loss = ppo_loss(ac, batch, idx, adv, returns, s.coef, &gp, &gv);
      if (!std::isfinite(loss.total) || !all_finite(gp) || !all_finite(gv)) {
        ac = saved;
        opt_policy = saved_p;
        opt_value = saved_v;
        out.aborted = true;
        return out;
      }
      clip_gradient(gp, s.max_grad_norm);
      clip_gradient(gv, s.max_grad_norm);
      opt_policy.step(ac.policy.params(), gp);
      opt_value.step(ac.value.params(), gv);
      out.surrogate += loss.surrogate;
      out.value_loss += loss.value_loss;
      out.entropy += loss.entropy;
      out.clip_fraction += loss.clip_fraction;
      out.approx_kl += loss.approx_kl;
      ++steps;
    }
  }
  out.surrogate /= steps;
  out.value_loss /= steps;
  out.entropy /= steps;
  out.clip_fraction /= steps;
  out.approx_kl /= steps;
  return out;
}

// A trained (or training) agent bound to an action space and input transform.
struct Agent {
  ActionSpace actions;
  ObservationTransform transform;
  ActorCritic net;

  static Agent create(const ActionSpace& space, const AgentConfig& cfg, Rng& rng) {
    Agent a;
    a.actions = space;
    a.transform = {cfg.log_energy, cfg.energy_floor};
    a.net = ActorCritic::create(observation_size(space), cfg.hidden, space.head_sizes(), rng,
                                cfg.hidden_gain, cfg.policy_output_gain, cfg.value_output_gain);
    return a;
  }

  std::vector<double> features(const Observation& o) const {
    if (o.action_count != actions.size()) {
      throw ConfigError("actions", "observation has " + std::to_string(o.action_count) +
                                       " actions, agent was built for " + std::to_string(actions.size()));
    }
    return transform(o);
  }

  int greedy_action(const Observation& o) const {
    const auto f = features(o);
    return actions.from_heads(greedy_heads(net.distribution(f)));
  }
};

enum class PolicyMode { kAggregate, kLocal };

struct EpisodeResult {
  std::vector<Transition> transitions;
  double total_reward = 0.0;
  RewardTerms terms;  // summed over the episode
};

// Rolls one training episode: one sampled action shared by every
// controllable inverter, chosen from the aggregate observation.
inline EpisodeResult sample_episode(Environment& env, const Agent& agent, std::uint64_t scenario_seed,
                                    Rng& rng) {
  EpisodeResult ep;
  Observation obs = env.reset(scenario_seed);
  while (!env.done()) {
    Transition tr;
    tr.features = agent.features(obs);
    const auto log_p = agent.net.distribution(tr.features);
    tr.choice = sample_heads(log_p, rng);
    tr.log_prob = joint_log_prob(log_p, tr.choice);
    tr.value = agent.net.state_value(tr.features);
    const StepResult r = env.step(agent.actions.from_heads(tr.choice));
    tr.reward = r.reward;
    tr.done = r.done;
    ep.total_reward += r.reward;
    ep.terms.oscillation += r.terms.oscillation;
    ep.terms.action_change += r.terms.action_change;
    ep.terms.deviation += r.terms.deviation;
    ep.terms.curtailment += r.terms.curtailment;
    ep.transitions.push_back(std::move(tr));
    obs = r.observation;
  }
  return ep;
}

// Greedy evaluation on an environment that has already been reset. In local
// mode each controllable inverter acts on its own observation; `null_policy`
// holds every inverter at the null action.
inline double run_greedy(Environment& env, const Agent* agent, PolicyMode mode, bool null_policy) {
  double total = 0.0;
  const int null = env.actions().null_action();
  Observation agg = env.observation();
  while (!env.done()) {
    std::vector<int> acts(env.controllable().size(), null);
    if (!null_policy) {
      if (!agent) throw std::invalid_argument("greedy run needs an agent or the null policy");
      if (mode == PolicyMode::kAggregate) {
        std::fill(acts.begin(), acts.end(), agent->greedy_action(agg));
      } else {
        const auto local = env.local_observations();
        for (std::size_t k = 0; k < local.size(); ++k) acts[k] = agent->greedy_action(local[k]);
      }
    }
    const StepResult r = env.step_local(acts);
    total += r.reward;
    agg = r.observation;
  }
  return total;
}

struct TrainPoint {
  int iteration = 0;
  std::uint64_t episodes = 0;  // cumulative
  int transitions = 0;
  int failures = 0;            // episodes discarded after a numerical failure
  double mean_return = 0.0;
  double mean_oscillation = 0.0;  // per-episode sum of the oscillation penalty
  double entropy_coef = 0.0;
  UpdateMetrics update;
};

// Everything needed to resume training or to evaluate a policy.
struct Checkpoint {
  static constexpr char kMagic[8] = {'D', 'G', 'C', 'K', 'P', 'T', '0', '1'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_ini;  // full run configuration, as text
  Agent agent;
  Adam opt_policy;
  Adam opt_value;
  int iteration = 0;
  std::uint64_t episodes = 0;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("checkpoint is truncated");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ULL << 30)) throw ParseError("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("checkpoint is truncated");
  return s;
}

template <class T>
void put_vector(std::ostream& out, const std::vector<T>& v) {
  put<std::uint64_t>(out, v.size());
  for (const auto& x : v) put(out, x);
}

template <class T>
std::vector<T> get_vector(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ULL << 28)) throw ParseError("checkpoint array length is implausible");
  std::vector<T> v(n);
  for (auto& x : v) x = get<T>(in);
  return v;
}

inline void put_mlp(std::ostream& out, const Mlp& m) {
  put_vector(out, m.widths());
  put_vector(out, m.params());
}

inline Mlp get_mlp(std::istream& in) {
  Mlp m(get_vector<int>(in));
  auto p = get_vector<double>(in);
  if (p.size() != m.parameter_count()) throw ParseError("checkpoint network size mismatch");
  m.params() = std::move(p);
  return m;
}

inline void put_adam(std::ostream& out, const Adam& a) {
  put(out, a.lr);
  put(out, a.beta1);
  put(out, a.beta2);
  put(out, a.eps);
  put(out, a.t);
  put_vector(out, a.m);
  put_vector(out, a.v);
}

inline Adam get_adam(std::istream& in) {
  Adam a;
  a.lr = get<double>(in);
  a.beta1 = get<double>(in);
  a.beta2 = get<double>(in);
  a.eps = get<double>(in);
  a.t = get<std::uint64_t>(in);
  a.m = get_vector<double>(in);
  a.v = get_vector<double>(in);
  return a;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(Checkpoint::kMagic, sizeof Checkpoint::kMagic);
  detail::put(out, Checkpoint::kVersion);
  detail::put_string(out, c.config_ini);
  const ActionSpace& s = c.agent.actions;
  detail::put_vector(out, s.offsets);
  detail::put_vector(out, s.slopes);
  detail::put<std::uint8_t>(out, s.encoding == ActionEncoding::kJoint ? 1 : 0);
  detail::put<std::uint8_t>(out, c.agent.transform.log_energy ? 1 : 0);
  detail::put(out, c.agent.transform.energy_floor);
  detail::put_vector(out, c.agent.net.heads);
  detail::put_mlp(out, c.agent.net.policy);
  detail::put_mlp(out, c.agent.net.value);
  detail::put_adam(out, c.opt_policy);
  detail::put_adam(out, c.opt_value);
  detail::put<std::int32_t>(out, c.iteration);
  detail::put(out, c.episodes);
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, Checkpoint::kMagic, sizeof magic) != 0) {
    throw ParseError("not a checkpoint file");
  }
  const auto version = detail::get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_ini = detail::get_string(in);
  ActionSpace& s = c.agent.actions;
  s.offsets = detail::get_vector<double>(in);
  s.slopes = detail::get_vector<double>(in);
  s.encoding = detail::get<std::uint8_t>(in) ? ActionEncoding::kJoint : ActionEncoding::kFactored;
  c.agent.transform.log_energy = detail::get<std::uint8_t>(in) != 0;
  c.agent.transform.energy_floor = detail::get<double>(in);
  c.agent.net.heads = detail::get_vector<int>(in);
  c.agent.net.policy = detail::get_mlp(in);
  c.agent.net.value = detail::get_mlp(in);
  c.opt_policy = detail::get_adam(in);
  c.opt_value = detail::get_adam(in);
  c.iteration = detail::get<std::int32_t>(in);
  c.episodes = detail::get<std::uint64_t>(in);
  if (s.head_sizes() != c.agent.net.heads ||
      c.agent.net.policy.input_size() != observation_size(s)) {
    throw ParseError("checkpoint networks do not match its action space");
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_checkpoint(out, c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint", "cannot open " + path);
  return read_checkpoint(in);
}

// PPO training loop. Episode k of the run uses scenario seed
// derive_seed(seed, "train-episode", k) and sampling stream
// ("train-sample", k), so results do not depend on the thread count.
class Trainer {
 public:
  Trainer(std::shared_ptr<const FeederModel> feeder, EnvConfig env_cfg, AgentConfig cfg,
          std::uint64_t seed)
      : feeder_(std::move(feeder)), env_cfg_(std::move(env_cfg)), cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    env_cfg_.validate();
    Rng init(seed_, "init");
    state_.agent = Agent::create(env_cfg_.actions, cfg_, init);
    state_.opt_policy.lr = state_.opt_value.lr = cfg_.lr;
    const int steps = static_cast<int>(Environment(feeder_, env_cfg_).agent_steps_per_episode());
    episodes_per_iteration_ = (cfg_.batch + steps - 1) / steps;
  }

  // Continues from a saved state (same seed and config expected).
  void resume(Checkpoint c) {
    if (!(c.agent.actions == env_cfg_.actions)) {
      throw ConfigError("actions", "checkpoint action space differs from the configuration");
    }
    state_ = std::move(c);
  }

  const Checkpoint& state() const { return state_; }
  Checkpoint& state() { return state_; }
  const AgentConfig& config() const { return cfg_; }
  int episodes_per_iteration() const { return episodes_per_iteration_; }

  double current_entropy_coef() const {
    if (!cfg_.entropy_decay || cfg_.iterations == 0) return cfg_.entropy_coef;
    const double frac = std::min(1.0, static_cast<double>(state_.iteration) / cfg_.iterations);
    return cfg_.entropy_coef * (1.0 - frac);
  }

  TrainPoint iterate() {
    const int n = episodes_per_iteration_;
    const std::uint64_t first = state_.episodes;
    std::vector<EpisodeResult> results(static_cast<std::size_t>(n));
    std::vector<int> failures(static_cast<std::size_t>(n), 0);

    auto work = [&](int slot) {
      Environment env(feeder_, env_cfg_);
      const std::uint64_t k = first + static_cast<std::uint64_t>(slot);
      for (int attempt = 0;; ++attempt) {
        const std::uint64_t id = k * 64 + static_cast<std::uint64_t>(attempt);
        Rng rng(seed_, "train-sample", id);
        try {
          results[static_cast<std::size_t>(slot)] =
              sample_episode(env, state_.agent, derive_seed(seed_, "train-episode", id), rng);
          return;
        } catch (const NumericalError&) {
          if (++failures[static_cast<std::size_t>(slot)] >= 64) throw;
        }
      }
    };

    const int threads = cfg_.deterministic ? 1 : std::min(cfg_.threads, n);
    if (threads <= 1) {
      for (int s = 0; s < n; ++s) work(s);
    } else {
      std::atomic<int> next{0};
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (int s; (s = next.fetch_add(1)) < n;) work(s);
          } catch (...) {
            errors[static_cast<std::size_t>(t)] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    TrainPoint pt;
    std::vector<Transition> batch;
    for (std::size_t s = 0; s < results.size(); ++s) {
      pt.mean_return += results[s].total_reward;
      pt.mean_oscillation += results[s].terms.oscillation;
      pt.failures += failures[s];
      for (auto& tr : results[s].transitions) batch.push_back(std::move(tr));
    }
    pt.mean_return /= n;
    pt.mean_oscillation /= n;

    std::vector<double> rewards, values;
    std::vector<std::uint8_t> done;
    for (const auto& tr : batch) {
      rewards.push_back(tr.reward);
      values.push_back(tr.value);
      done.push_back(tr.done ? 1 : 0);
    }
    const GaeResult gae = compute_gae(rewards, values, done, cfg_.gamma, cfg_.lambda);

    PpoSettings ps;
    ps.coef = {cfg_.clip, cfg_.value_coef, current_entropy_coef()};
    ps.epochs = cfg_.epochs;
    ps.minibatch = cfg_.minibatch;
    ps.normalize_advantages = cfg_.normalize_advantages;
    ps.max_grad_norm = cfg_.max_grad_norm;
    Rng shuffle(seed_, "shuffle", static_cast<std::uint64_t>(state_.iteration));
    pt.update = ppo_update(state_.agent.net, state_.opt_policy, state_.opt_value, batch,
                           gae.advantages, gae.returns, ps, shuffle);

    pt.entropy_coef = ps.coef.entropy_coef;
    pt.transitions = static_cast<int>(batch.size());
    state_.episodes += static_cast<std::uint64_t>(n);
    state_.iteration += 1;
    pt.iteration = state_.iteration;
    pt.episodes = state_.episodes;
    return pt;
  }

  // Runs until the iteration budget or a plateau. `on_point` sees every
  // iteration; `on_checkpoint` is called every checkpoint_interval
  // iterations and at the end.
  std::vector<TrainPoint> run(const std::function<void(const TrainPoint&)>& on_point = {},
                              const std::function<void(const Checkpoint&)>& on_checkpoint = {}) {
    std::vector<TrainPoint> curve;
    std::vector<double> returns;
    double best = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    while (state_.iteration < cfg_.iterations) {
      TrainPoint pt = iterate();
      curve.push_back(pt);
      returns.push_back(pt.mean_return);
      if (on_point) on_point(pt);
      if (on_checkpoint && state_.iteration % cfg_.checkpoint_interval == 0) on_checkpoint(state_);
      if (cfg_.plateau_window > 0 && static_cast<int>(returns.size()) >= cfg_.plateau_window) {
        const double avg = std::accumulate(returns.end() - cfg_.plateau_window, returns.end(), 0.0) /
                           cfg_.plateau_window;
        if (avg > best + cfg_.plateau_tol) {
          best = avg;
          since_best = 0;
        } else if (++since_best >= cfg_.plateau_window) {
          break;
        }
      }
    }
    if (on_checkpoint && state_.iteration % cfg_.checkpoint_interval != 0) on_checkpoint(state_);
    return curve;
  }

 private:
  std::shared_ptr<const FeederModel> feeder_;
  EnvConfig env_cfg_;
  AgentConfig cfg_;
  std::uint64_t seed_;
  Checkpoint state_;
  int episodes_per_iteration_ = 1;
};

}  // namespace droopguard
