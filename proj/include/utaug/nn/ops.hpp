#pragma once

// Forward and backward passes of the network layers. Feature maps are
// [channels, rows, cols] with rows along the scan axis and cols along time.

#include <span>
#include <vector>

#include "utaug/nn/tensor.hpp"

namespace utaug::nn {

struct Window2d {
  std::size_t rows = 1;
  std::size_t cols = 1;
  bool operator==(const Window2d&) const = default;
};

/// Non-overlapping max pooling, stride = window; trailing partial windows are
/// dropped. Ties route the gradient to the first maximum in row-major order.
Tensor maxpool2d(const Tensor& x, Window2d window);
Tensor maxpool2d_backward(const Tensor& x, Window2d window, const Tensor& grad_out);

/// Per-channel maximum over the whole map: [C,H,W] -> [C].
Tensor global_maxpool(const Tensor& x);
Tensor global_maxpool_backward(const Tensor& x, const Tensor& grad_out);

/// Valid cross-correlation. x [C,H,W], weights [O,C,KH,KW], bias [O].
Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct Conv2dGrads {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out);

/// x is flattened; weights [O, N], bias [O].
Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor grad_x;  // shaped like x
  Tensor grad_w;
  Tensor grad_b;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor sigmoid(const Tensor& x);
/// Takes the forward output y = sigmoid(x).
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

inline constexpr double kBceClip = 1e-7;

struct BceResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d p
};

/// Mean binary cross-entropy. Probabilities are clipped to
/// [1e-7, 1 - 1e-7]; the gradient is evaluated at the clipped value.
BceResult bce_loss(std::span<const double> p, std::span<const double> y);

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-7;
};

/// s <- rho*s + (1-rho)*g^2;  p <- p - lr*g/(sqrt(s)+eps)
void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> state,
                  const RmsPropConfig& config);

}  // namespace utaug::nn
