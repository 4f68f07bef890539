#include <doctest.h>

#include <cmath>

#include "envelope_oracle.hpp"
#include "gradcheck.hpp"
#include "utaug/nn/ops.hpp"

using namespace utaug::nn;

TEST_CASE("maxpool picks the larger of each column pair") {
  const Tensor x({1, 2, 2}, {0, 1, 3, 2});
  const Tensor y = maxpool2d(x, {2, 1});
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("maxpool of a constant map is constant and drops partial windows") {
  const Tensor x({2, 7, 9}, 1.25);
  const Tensor y = maxpool2d(x, {2, 4});
  CHECK(y.shape() == Shape{2, 3, 2});
  for (double v : y.values()) CHECK(v == 1.25);
  CHECK_THROWS_AS(maxpool2d(x, {8, 1}), std::invalid_argument);
  CHECK_THROWS_AS(maxpool2d(x, {0, 1}), std::invalid_argument);
}

TEST_CASE("maxpool ties route the gradient to the first maximum") {
  const Tensor x({1, 2, 2}, 5.0);
  const Tensor g = maxpool2d_backward(x, {2, 2}, Tensor({1, 1, 1}, 1.0));
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("conv closed forms") {
  utaug::Rng rng(2);
  const Tensor x = gradcheck::random_tensor(rng, {1, 5, 6});
  const Tensor id = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0));
  CHECK(id == x);

  const Tensor c({1, 6, 6}, 0.75);
  const Tensor y = conv2d_forward(c, Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.5));
  CHECK(y.shape() == Shape{1, 4, 4});
  for (double v : y.values()) CHECK(v == doctest::Approx(9 * 0.75 + 0.5).epsilon(1e-15));

  CHECK_THROWS_AS(conv2d_forward(c, Tensor({1, 2, 3, 3}), Tensor({1})), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_forward(c, Tensor({1, 1, 3, 3}), Tensor({2})), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_forward(c, Tensor({1, 1, 7, 7}), Tensor({1})), std::invalid_argument);
}

TEST_CASE("conv gradients on a 6x6 input") {
  utaug::Rng rng(3);
  const Tensor x = gradcheck::random_tensor(rng, {2, 6, 6});
  const Tensor w = gradcheck::random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = gradcheck::random_tensor(rng, {3});
  const Tensor r = gradcheck::random_tensor(rng, {3, 4, 4});
  const auto g = conv2d_backward(x, w, r);
  using gradcheck::dot;
  CHECK(gradcheck::max_error([&](const Tensor& t) { return dot(conv2d_forward(t, w, b), r); }, x, g.grad_x) < 1e-4);
  CHECK(gradcheck::max_error([&](const Tensor& t) { return dot(conv2d_forward(x, t, b), r); }, w, g.grad_w) < 1e-4);
  CHECK(gradcheck::max_error([&](const Tensor& t) { return dot(conv2d_forward(x, w, t), r); }, b, g.grad_b) < 1e-4);
}

TEST_CASE("every layer passes randomised finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : gradcheck::check_all_layers(seed)) {
      INFO(c.layer << " seed " << seed);
      CHECK(c.error < 1e-4);
    }
  }
}

TEST_CASE("sigmoid and relu") {
  CHECK(sigmoid(Tensor({1}, 0.0))[0] == 0.5);
  const Tensor neg({4}, {-1.0, -0.5, -3.0, -1e-9});
  const Tensor out = relu(neg);
  const Tensor grad = relu_backward(neg, Tensor({4}, 1.0));
  for (double v : out.values()) CHECK(v == 0.0);
  for (double v : grad.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(dense_forward(Tensor({3}), Tensor({2, 4}), Tensor({2})), std::invalid_argument);
}

TEST_CASE("bce values") {
  const std::vector<double> half(6, 0.5);
  const std::vector<double> y{0, 1, 0, 1, 1, 0};
  CHECK(bce_loss(half, y).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const auto exact = bce_loss(y, y);
  CHECK(exact.loss <= -std::log(1.0 - 1e-7) * (1 + 1e-12));
  CHECK(exact.loss > 0.0);

  utaug::Rng rng(5);
  std::vector<double> p(8), t(8);
  for (std::size_t i = 0; i < 8; ++i) {
    p[i] = rng.uniform01();
    t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  p[3] = 0.0;  // exercises the clip
  const auto res = bce_loss(p, t);
  double want = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const double q = std::min(std::max(p[i], 1e-7), 1.0 - 1e-7);
    want += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
    const double g = (-(t[i] / q) + (1.0 - t[i]) / (1.0 - q)) / 8.0;
    CHECK(std::abs(res.grad[i] - g) <= 1e-12 * std::max(1.0, std::abs(g)));
  }
  CHECK(std::abs(res.loss - want / 8.0) <= 1e-12);
  CHECK_THROWS_AS(bce_loss(std::vector<double>(3, 0.5), std::vector<double>(2, 1.0)), std::invalid_argument);
}

TEST_CASE("rmsprop") {
  const RmsPropConfig cfg{0.01, 0.9, 1e-7};
  std::vector<double> p{1.0, -2.0}, s{0.4, 0.1};
  rmsprop_step(p, std::vector<double>{0.0, 0.0}, s, cfg);
  CHECK(p == std::vector<double>{1.0, -2.0});
  CHECK(s[0] == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.09).epsilon(1e-15));

  std::vector<double> q{0.3}, st{0.0};
  const double g = 0.7;
  rmsprop_step(q, std::vector<double>{g}, st, cfg);
  CHECK(std::abs(q[0] - (0.3 - 0.01 * g / (std::sqrt(0.1 * g * g) + 1e-7))) <= 1e-15);

  // f(x) = (x - 3)^2 / 2, three steps
  std::vector<double> x{0.5}, state{0.0};
  double hx = 0.5, hs = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double grad = x[0] - 3.0;
    rmsprop_step(x, std::vector<double>{grad}, state, cfg);
    const double hg = hx - 3.0;
    hs = 0.9 * hs + 0.1 * hg * hg;
    hx = hx - 0.01 * hg / (std::sqrt(hs) + 1e-7);
    CHECK(std::abs(x[0] - hx) <= 1e-12);
    CHECK(std::abs(state[0] - hs) <= 1e-12);
  }
  CHECK_THROWS_AS(rmsprop_step(x, std::vector<double>{1.0, 2.0}, state, cfg), std::invalid_argument);
}

TEST_CASE("max pooling one period of a rectified burst follows its envelope") {
  CHECK(envelope_oracle::correlation({}) >= 0.98);
  utaug::Rng rng(21);
  for (int i = 0; i < 25; ++i) {
    const auto b = envelope_oracle::random_burst(rng);
    INFO("period " << b.period << " windows " << b.n_windows);
    CHECK(envelope_oracle::correlation(b) >= 0.98);
  }
}
