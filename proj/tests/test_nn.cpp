#include <gtest/gtest.h>

#include <cmath>

#include "droopguard/nn.hpp"
#include "droopguard/rng.hpp"

using namespace droopguard;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Scalar test loss: a fixed random projection of the output.
double projected(const Mlp& net, const std::vector<double>& x, const std::vector<double>& w) {
  const auto y = net.forward(x);
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += w[k] * y[k];
  return s;
}

}  // namespace

TEST(Mlp, ShapesAndErrors) {
  Mlp net({3, 5, 2});
  EXPECT_EQ(net.parameter_count(), 3u * 5 + 5 + 5 * 2 + 2);
  EXPECT_EQ(net.forward(std::vector<double>{1, 2, 3}).size(), 2u);
  EXPECT_THROW(net.forward(std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(Mlp({3}), std::invalid_argument);
  EXPECT_THROW(Mlp({3, 0, 1}), std::invalid_argument);
}

TEST(Mlp, GradientMatchesFiniteDifference) {
  Rng rng(5);
  for (const auto& widths : {std::vector<int>{2, 4, 2}, std::vector<int>{5, 7, 6, 3}}) {
    Mlp net(widths);
    net.params() = random_vec(rng, net.parameter_count(), 0.7);
    const auto x = random_vec(rng, static_cast<std::size_t>(widths.front()));
    const auto w = random_vec(rng, static_cast<std::size_t>(widths.back()));
    Mlp::Cache cache;
    net.forward(x, &cache);
    std::vector<double> grad(net.parameter_count(), 0.0);
    net.backward(cache, w, grad);
    const double h = 1e-5;
    for (std::size_t k = 0; k < net.parameter_count(); ++k) {
      Mlp up = net, dn = net;
      up.params()[k] += h;
      dn.params()[k] -= h;
      const double fd = (projected(up, x, w) - projected(dn, x, w)) / (2 * h);
      EXPECT_NEAR(grad[k], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "param " << k;
    }
  }
}

TEST(Mlp, BackwardAccumulates) {
  Rng rng(6);
  Mlp net({2, 3, 1});
  net.params() = random_vec(rng, net.parameter_count());
  Mlp::Cache cache;
  net.forward(std::vector<double>{0.3, -0.2}, &cache);
  std::vector<double> once(net.parameter_count(), 0.0), twice(net.parameter_count(), 0.0);
  const std::vector<double> d{1.0};
  net.backward(cache, d, once);
  net.backward(cache, d, twice);
  net.backward(cache, d, twice);
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_DOUBLE_EQ(twice[k], 2.0 * once[k]);
}

TEST(Mlp, OrthogonalInitRows) {
  Rng rng(7);
  Mlp net({8, 4, 6});
  net.init_orthogonal(rng, 2.0, 0.5);
  // First layer 4 x 8: rows orthogonal with norm 2.
  const double* w = net.params().data();
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int i = 0; i < 8; ++i) dot += w[a * 8 + i] * w[b * 8 + i];
      EXPECT_NEAR(dot, a == b ? 4.0 : 0.0, 1e-12);
    }
  }
  // Second layer 6 x 4: columns orthogonal with norm 0.5.
  const double* w2 = w + 8 * 4 + 4;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int o = 0; o < 6; ++o) dot += w2[o * 4 + a] * w2[o * 4 + b];
      EXPECT_NEAR(dot, a == b ? 0.25 : 0.0, 1e-12);
    }
  }
  // Biases start at zero.
  for (int o = 0; o < 4; ++o) EXPECT_EQ(w[32 + o], 0.0);
}

TEST(Softmax, SumsToOne) {
  Rng rng(8);
  for (int k = 0; k < 1000; ++k) {
    const auto logits = random_vec(rng, 1 + rng.index(20), rng.uniform(0.0, 300.0));
    const auto p = softmax(logits);
    double s = 0.0;
    for (double x : p) {
      ASSERT_GE(x, 0.0);
      s += x;
    }
    ASSERT_NEAR(s, 1.0, 1e-9);
    ASSERT_TRUE(all_finite(log_softmax(logits)));
  }
}

TEST(Softmax, EntropyOfUniform) {
  const std::vector<double> z(11, 0.3);
  EXPECT_NEAR(entropy_of(log_softmax(z)), std::log(11.0), 1e-12);
}

TEST(Adam, MinimizesQuadratic) {
  std::vector<double> x{3.0, -2.0};
  Adam opt;
  opt.lr = 0.05;
  for (int k = 0; k < 2000; ++k) {
    const std::vector<double> g{2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)};
    opt.step(x, g);
  }
  EXPECT_NEAR(x[0], 1.0, 1e-3);
  EXPECT_NEAR(x[1], -0.5, 1e-3);
}

// A value network alone fitted to a fixed return function: MSE falls by at
// least 100x within 500 full-batch steps.
TEST(Mlp, ValueRegressionLearns) {
  Rng rng(9);
  Mlp net({4, 64, 64, 32, 1});
  net.init_orthogonal(rng, std::sqrt(2.0), 1.0);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (int k = 0; k < 128; ++k) {
    xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const auto& x = xs.back();
    ys.push_back(-15.0 * (0.5 + 0.4 * std::sin(2.0 * x[0]) + 0.3 * x[1] * x[2]));
  }
  auto mse = [&] {
    double s = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double e = net.forward(xs[k])[0] - ys[k];
      s += e * e;
    }
    return s / static_cast<double>(xs.size());
  };
  const double before = mse();
  Adam opt;
  opt.lr = 1e-3;
  Mlp::Cache cache;
  for (int step = 0; step < 500; ++step) {
    std::vector<double> g(net.parameter_count(), 0.0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double e = net.forward(xs[k], &cache)[0] - ys[k];
      const double d = 2.0 * e / static_cast<double>(xs.size());
      net.backward(cache, std::span<const double>(&d, 1), g);
    }
    opt.step(net.params(), g);
  }
  EXPECT_LT(mse(), before / 100.0) << "before " << before;
}
