#include "utaug/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace utaug::nn {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

}  // namespace

Tensor maxpool2d(const Tensor& x, Window2d window) {
  require_rank(x, 3, "maxpool2d");
  if (window.rows < 1 || window.cols < 1) throw std::invalid_argument("maxpool2d: window must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window.rows > h || window.cols > w) throw std::invalid_argument("maxpool2d: window larger than input");
  const std::size_t oh = h / window.rows, ow = w / window.cols;
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * h * w;
    double* dst = out.data() + ch * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double m = src[(i * window.rows) * w + j * window.cols];
        for (std::size_t a = 0; a < window.rows; ++a) {
          const double* r = src + (i * window.rows + a) * w + j * window.cols;
          for (std::size_t b = 0; b < window.cols; ++b) m = std::max(m, r[b]);
        }
        dst[i * ow + j] = m;
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& x, Window2d window, const Tensor& grad_out) {
  require_rank(x, 3, "maxpool2d_backward");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / window.rows, ow = w / window.cols;
  if (grad_out.shape() != Shape{c, oh, ow}) throw std::invalid_argument("maxpool2d_backward: grad shape mismatch");
  Tensor grad_x(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * h * w;
    double* gx = grad_x.data() + ch * h * w;
    const double* g = grad_out.data() + ch * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (i * window.rows) * w + j * window.cols;
        for (std::size_t a = 0; a < window.rows; ++a) {
          for (std::size_t b = 0; b < window.cols; ++b) {
            const std::size_t idx = (i * window.rows + a) * w + j * window.cols + b;
            if (src[idx] > src[best]) best = idx;
          }
        }
        gx[best] += g[i * ow + j];
      }
    }
  }
  return grad_x;
}

Tensor global_maxpool(const Tensor& x) {
  require_rank(x, 3, "global_maxpool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (hw == 0) throw std::invalid_argument("global_maxpool: empty feature map");
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * hw;
    out[ch] = *std::max_element(src, src + hw);
  }
  return out;
}

Tensor global_maxpool_backward(const Tensor& x, const Tensor& grad_out) {
  require_rank(x, 3, "global_maxpool_backward");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (grad_out.shape() != Shape{c}) throw std::invalid_argument("global_maxpool_backward: grad shape mismatch");
  Tensor grad_x(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * hw;
    const auto best = static_cast<std::size_t>(std::max_element(src, src + hw) - src);
    grad_x[ch * hw + best] = grad_out[ch];
  }
  return grad_x;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank(x, 3, "conv2d_forward");
  require_rank(weights, 4, "conv2d_forward weights");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != c) throw std::invalid_argument("conv2d_forward: channel mismatch");
  if (bias.shape() != Shape{o}) throw std::invalid_argument("conv2d_forward: bias shape mismatch");
  if (kh > h || kw > w || kh == 0 || kw == 0) throw std::invalid_argument("conv2d_forward: kernel does not fit input");
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  Tensor out({o, oh, ow});
  for (std::size_t oc = 0; oc < o; ++oc) {
    double* dst = out.data() + oc * oh * ow;
    std::fill(dst, dst + oh * ow, bias[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double* src = x.data() + ic * h * w;
      const double* k = weights.data() + ((oc * c + ic) * kh) * kw;
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          const double wv = k[a * kw + b];
          for (std::size_t i = 0; i < oh; ++i) {
            const double* s = src + (i + a) * w + b;
            double* d = dst + i * ow;
            for (std::size_t j = 0; j < ow; ++j) d[j] += wv * s[j];
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out) {
  require_rank(x, 3, "conv2d_backward");
  require_rank(weights, 4, "conv2d_backward weights");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != c || kh > h || kw > w) throw std::invalid_argument("conv2d_backward: shape mismatch");
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  if (grad_out.shape() != Shape{o, oh, ow}) throw std::invalid_argument("conv2d_backward: grad shape mismatch");

  Conv2dGrads g{Tensor(x.shape()), Tensor(weights.shape()), Tensor({o})};
  for (std::size_t oc = 0; oc < o; ++oc) {
    const double* go = grad_out.data() + oc * oh * ow;
    double sum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) sum += go[i];
    g.grad_b[oc] = sum;
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double* src = x.data() + ic * h * w;
      double* gx = g.grad_x.data() + ic * h * w;
      const double* k = weights.data() + ((oc * c + ic) * kh) * kw;
      double* gk = g.grad_w.data() + ((oc * c + ic) * kh) * kw;
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          const double wv = k[a * kw + b];
          double acc = 0.0;
          for (std::size_t i = 0; i < oh; ++i) {
            const double* s = src + (i + a) * w + b;
            double* dx = gx + (i + a) * w + b;
            const double* gr = go + i * ow;
            for (std::size_t j = 0; j < ow; ++j) {
              acc += gr[j] * s[j];
              dx[j] += wv * gr[j];
            }
          }
          gk[a * kw + b] = acc;
        }
      }
    }
  }
  return g;
}

Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "dense_forward weights");
  const std::size_t o = weights.dim(0), n = weights.dim(1);
  if (x.size() != n) throw std::invalid_argument("dense_forward: input size mismatch");
  if (bias.shape() != Shape{o}) throw std::invalid_argument("dense_forward: bias shape mismatch");
  Tensor out({o});
  for (std::size_t r = 0; r < o; ++r) {
    const double* wr = weights.data() + r * n;
    double acc = bias[r];
    for (std::size_t i = 0; i < n; ++i) acc += wr[i] * x[i];
    out[r] = acc;
  }
  return out;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out) {
  require_rank(weights, 2, "dense_backward weights");
  const std::size_t o = weights.dim(0), n = weights.dim(1);
  if (x.size() != n || grad_out.shape() != Shape{o}) throw std::invalid_argument("dense_backward: shape mismatch");
  DenseGrads g{Tensor(x.shape()), Tensor(weights.shape()), Tensor({o})};
  for (std::size_t r = 0; r < o; ++r) {
    const double gr = grad_out[r];
    const double* wr = weights.data() + r * n;
    double* gw = g.grad_w.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      gw[i] = gr * x[i];
      g.grad_x[i] += gr * wr[i];
    }
    g.grad_b[r] = gr;
  }
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = x[i];
    if (z >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-z));
    } else {
      const double e = std::exp(z);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return out;
}

BceResult bce_loss(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw std::invalid_argument("bce_loss: length mismatch");
  if (p.empty()) throw std::invalid_argument("bce_loss: empty batch");
  const double n = static_cast<double>(p.size());
  BceResult r;
  r.grad.resize(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], kBceClip, 1.0 - kBceClip);
    sum += y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
    r.grad[i] = (-(y[i] / pc) + (1.0 - y[i]) / (1.0 - pc)) / n;
  }
  r.loss = -sum / n;
  return r;
}

void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> state,
                  const RmsPropConfig& config) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw std::invalid_argument("rmsprop_step: size mismatch");
  }
  const double rho = config.rho;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state[i] = rho * state[i] + (1.0 - rho) * g * g;
    params[i] -= config.learning_rate * g / (std::sqrt(state[i]) + config.epsilon);
  }
}

}  // namespace utaug::nn
