#pragma once

// Central finite-difference checks of the layer backward passes. Each layer
// is reduced to the scalar L = sum(out * R) for a fixed random R, so the
// upstream gradient fed to backward is R itself.

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <string>
#include <vector>

#include "utaug/nn/ops.hpp"
#include "utaug/random.hpp"

namespace gradcheck {

using utaug::nn::Shape;
using utaug::nn::Tensor;

inline constexpr double kStep = 1e-5;

inline Tensor random_tensor(utaug::Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Largest relative error between `analytic` and central differences of f at x.
inline double max_error(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& analytic) {
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + kStep;
    const double up = f(probe);
    probe[i] = x[i] - kStep;
    const double down = f(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * kStep)));
  }
  return worst;
}

/// Input values at least `gap` apart inside every pooling window, so the
/// maximum is not at a tie and stays put under a step of kStep.
inline Tensor untied_tensor(utaug::Rng& rng, Shape shape, double gap = 1e-3) {
  Tensor t(std::move(shape));
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) t[i] = gap * static_cast<double>(i);
  for (std::size_t i = n; i > 1; --i) std::swap(t[i - 1], t[rng.index(i)]);
  for (auto& v : t.values()) v -= gap * static_cast<double>(n) / 2.0;
  return t;
}

struct Case {
  std::string layer;
  double error = 0.0;
};

/// One randomised check of every differentiable layer.
inline std::vector<Case> check_all_layers(std::uint64_t seed) {
  using namespace utaug::nn;
  utaug::Rng rng(seed);
  std::vector<Case> out;

  {
    const std::size_t c = 1 + rng.index(3), h = 4 + rng.index(4), w = 4 + rng.index(4), o = 1 + rng.index(3);
    const std::size_t k = 1 + rng.index(3);
    const Tensor x = random_tensor(rng, {c, h, w});
    const Tensor wt = random_tensor(rng, {o, c, k, k});
    const Tensor b = random_tensor(rng, {o});
    const Tensor r = random_tensor(rng, {o, h - k + 1, w - k + 1});
    const auto g = conv2d_backward(x, wt, r);
    double e = max_error([&](const Tensor& t) { return dot(conv2d_forward(t, wt, b), r); }, x, g.grad_x);
    e = std::max(e, max_error([&](const Tensor& t) { return dot(conv2d_forward(x, t, b), r); }, wt, g.grad_w));
    e = std::max(e, max_error([&](const Tensor& t) { return dot(conv2d_forward(x, wt, t), r); }, b, g.grad_b));
    out.push_back({"conv2d", e});
  }
  {
    const std::size_t n = 1 + rng.index(12), o = 1 + rng.index(5);
    const Tensor x = random_tensor(rng, {n});
    const Tensor wt = random_tensor(rng, {o, n});
    const Tensor b = random_tensor(rng, {o});
    const Tensor r = random_tensor(rng, {o});
    const auto g = dense_backward(x, wt, r);
    double e = max_error([&](const Tensor& t) { return dot(dense_forward(t, wt, b), r); }, x, g.grad_x);
    e = std::max(e, max_error([&](const Tensor& t) { return dot(dense_forward(x, t, b), r); }, wt, g.grad_w));
    e = std::max(e, max_error([&](const Tensor& t) { return dot(dense_forward(x, wt, t), r); }, b, g.grad_b));
    out.push_back({"dense", e});
  }
  {
    const Tensor x = random_tensor(rng, {1 + rng.index(10)}, 3.0);
    const Tensor r = random_tensor(rng, x.shape());
    const Tensor grad = sigmoid_backward(sigmoid(x), r);
    out.push_back({"sigmoid", max_error([&](const Tensor& t) { return dot(sigmoid(t), r); }, x, grad)});
  }
  {
    const std::size_t n = 1 + rng.index(10);
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.05, 0.95);
      y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    const auto res = bce_loss(p, y);
    const Tensor pt({n}, p);
    const Tensor grad({n}, res.grad);
    out.push_back({"bce", max_error(
                              [&](const Tensor& t) {
                                return bce_loss(std::vector<double>(t.values().begin(), t.values().end()), y).loss;
                              },
                              pt, grad)});
  }
  {
    const Window2d win{1 + rng.index(3), 1 + rng.index(3)};
    const std::size_t c = 1 + rng.index(2);
    const Tensor x = untied_tensor(rng, {c, win.rows * (1 + rng.index(3)), win.cols * (1 + rng.index(3))});
    const Tensor r = random_tensor(rng, maxpool2d(x, win).shape());
    const Tensor grad = maxpool2d_backward(x, win, r);
    out.push_back({"maxpool2d", max_error([&](const Tensor& t) { return dot(maxpool2d(t, win), r); }, x, grad)});
  }
  {
    const Tensor x = untied_tensor(rng, {1 + rng.index(3), 2 + rng.index(3), 2 + rng.index(3)});
    const Tensor r = random_tensor(rng, {x.dim(0)});
    const Tensor grad = global_maxpool_backward(x, r);
    out.push_back({"global_maxpool", max_error([&](const Tensor& t) { return dot(global_maxpool(t), r); }, x, grad)});
  }
  {
    // keep inputs away from the kink at zero
    Tensor x = random_tensor(rng, {1 + rng.index(10)});
    for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
    const Tensor r = random_tensor(rng, x.shape());
    const Tensor grad = relu_backward(x, r);
    out.push_back({"relu", max_error([&](const Tensor& t) { return dot(relu(t), r); }, x, grad)});
  }
  return out;
}

}  // namespace gradcheck
