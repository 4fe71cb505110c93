#pragma once

// Small dense networks with tanh hidden layers and a linear output, stored
// as one flat parameter vector so optimizers and checkpoints see a single
// buffer. Backpropagation is written out by hand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droopguard/rng.hpp"

namespace droopguard {

class Mlp {
 public:
  // Activations of every layer for one input, kept for the backward pass.
  struct Cache {
    std::vector<std::vector<double>> act;
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("network needs input and output widths");
    for (int w : widths_) {
      if (w < 1) throw std::invalid_argument("layer widths must be positive");
    }
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_.assign(n, 0.0);
  }

  const std::vector<int>& widths() const { return widths_; }
  int input_size() const { return widths_.front(); }
  int output_size() const { return widths_.back(); }
  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Orthogonal weights scaled by `hidden_gain` (last layer: `output_gain`),
  // zero biases.
  void init_orthogonal(Rng& rng, double hidden_gain, double output_gain) {
    for (std::size_t l = 0; l < layers(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double gain = l + 1 == layers() ? output_gain : hidden_gain;
      const auto q = orthogonal(rng, out, in);
      double* w = params_.data() + offsets_[l];
      for (std::size_t k = 0; k < q.size(); ++k) w[k] = gain * q[k];
      std::fill(w + q.size(), w + q.size() + out, 0.0);
    }
  }

  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != input_size()) {
      throw std::invalid_argument("network input has " + std::to_string(x.size()) +
                                  " values, expected " + std::to_string(input_size()));
    }
    std::vector<double> a(x.begin(), x.end());
    if (cache) {
      cache->act.clear();
      cache->act.push_back(a);
    }
    for (std::size_t l = 0; l < layers(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double* w = params_.data() + offsets_[l];
      const double* b = w + static_cast<std::size_t>(in) * out;
      std::vector<double> z(static_cast<std::size_t>(out));
      for (int o = 0; o < out; ++o) {
        double s = b[o];
        const double* row = w + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) s += row[i] * a[i];
        z[o] = l + 1 == layers() ? s : std::tanh(s);
      }
      a = std::move(z);
      if (cache) cache->act.push_back(a);
    }
    return a;
  }

  // Adds d(loss)/d(params) to `grad` given d(loss)/d(output) for the input
  // whose activations are in `cache`.
  void backward(const Cache& cache, std::span<const double> d_out, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    std::vector<double> delta(d_out.begin(), d_out.end());
    for (std::size_t l = layers(); l-- > 0;) {
      const int in = widths_[l], out = widths_[l + 1];
      const double* w = params_.data() + offsets_[l];
      double* gw = grad.data() + offsets_[l];
      double* gb = gw + static_cast<std::size_t>(in) * out;
      const auto& a_in = cache.act[l];
      if (l + 1 != layers()) {
        // Through tanh: d/dz = d/da * (1 - a^2).
        const auto& a_out = cache.act[l + 1];
        for (int o = 0; o < out; ++o) delta[o] *= 1.0 - a_out[o] * a_out[o];
      }
      std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        gb[o] += d;
        const double* row = w + static_cast<std::size_t>(o) * in;
        double* grow = gw + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          grow[i] += d * a_in[i];
          prev[i] += d * row[i];
        }
      }
      delta = std::move(prev);
    }
  }

 private:
  // Row-major out x in matrix with orthonormal rows (out <= in) or columns.
  static std::vector<double> orthogonal(Rng& rng, int out, int in) {
    const bool rows = out <= in;
    const int count = rows ? out : in, dim = rows ? in : out;
    std::vector<std::vector<double>> v(static_cast<std::size_t>(count), std::vector<double>(dim));
    for (int k = 0; k < count; ++k) {
      for (;;) {
        for (auto& x : v[k]) x = rng.normal();
        for (int j = 0; j < k; ++j) {
          double dot = 0.0;
          for (int d = 0; d < dim; ++d) dot += v[k][d] * v[j][d];
          for (int d = 0; d < dim; ++d) v[k][d] -= dot * v[j][d];
        }
        double norm = 0.0;
        for (double x : v[k]) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-8) {
          for (auto& x : v[k]) x /= norm;
          break;
        }
      }
    }
    std::vector<double> m(static_cast<std::size_t>(out) * in);
    for (int o = 0; o < out; ++o) {
      for (int i = 0; i < in; ++i) m[static_cast<std::size_t>(o) * in + i] = rows ? v[o][i] : v[i][o];
    }
    return m;
  }

  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Adaptive-moment optimizer over a flat parameter vector.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  void step(std::span<double> params, std::span<const double> grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
      t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
      params[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
};

// Log-probabilities of a categorical distribution given its logits.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto p = log_softmax(logits);
  for (auto& x : p) x = std::exp(x);
  return p;
}

inline double entropy_of(std::span<const double> log_p) {
  double h = 0.0;
  for (double lp : log_p) h -= std::exp(lp) * lp;
  return h;
}

inline double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace droopguard
