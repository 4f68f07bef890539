#include "utaug/nn/network.hpp"

#include <cmath>
#include <stdexcept>

#include "utaug/binio.hpp"
#include "utaug/errors.hpp"
#include "utaug/random.hpp"

namespace utaug::nn {

namespace {

constexpr char kMagic[] = "UTN1";
constexpr std::uint16_t kVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

void NetworkConfig::validate() const {
  if (input_n < 1) throw std::invalid_argument("input_n must be >= 1");
  if (first_pool.rows < 1 || first_pool.cols < 1) throw std::invalid_argument("first_pool window must be >= 1");
  if (kernel < 1) throw std::invalid_argument("kernel must be >= 1");
  for (const auto& b : conv_blocks) {
    if (b.channels < 1 || b.convs < 1) throw std::invalid_argument("conv blocks need channels and convs >= 1");
  }
  for (auto w : dense) {
    if (w < 1) throw std::invalid_argument("dense widths must be >= 1");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(rmsprop.learning_rate > 0.0 && rmsprop.rho >= 0.0 && rmsprop.rho < 1.0 && rmsprop.epsilon > 0.0)) {
    throw std::invalid_argument("invalid RMSProp hyperparameters");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must be in [0, 1]");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.conv_blocks) blocks.push_back({{"channels", b.channels}, {"convs", b.convs}});
  j = {{"input_n", c.input_n},
       {"first_pool", {{"scan", c.first_pool.rows}, {"time", c.first_pool.cols}}},
       {"conv_blocks", blocks},
       {"kernel", c.kernel},
       {"dense", c.dense},
       {"head", c.head == Head::flatten ? "flatten" : "global_max"},
       {"rmsprop",
        {{"learning_rate", c.rmsprop.learning_rate}, {"rho", c.rmsprop.rho}, {"epsilon", c.rmsprop.epsilon}}},
       {"epochs", c.epochs},
       {"samples_per_epoch", c.samples_per_epoch},
       {"batch_size", c.batch_size},
       {"early_stop_patience", c.early_stop_patience},
       {"keep_best", c.keep_best},
       {"init_seed", c.init_seed},
       {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.input_n = j.value("input_n", d.input_n);
  if (j.contains("first_pool")) {
    c.first_pool = {j["first_pool"].at("scan").get<std::size_t>(), j["first_pool"].at("time").get<std::size_t>()};
  }
  if (j.contains("conv_blocks")) {
    c.conv_blocks.clear();
    for (const auto& b : j["conv_blocks"]) {
      c.conv_blocks.push_back({b.at("channels").get<std::size_t>(), b.value("convs", std::size_t{1})});
    }
  }
  c.kernel = j.value("kernel", d.kernel);
  if (j.contains("dense")) c.dense = j["dense"].get<std::vector<std::size_t>>();
  const auto head = j.value("head", std::string("flatten"));
  if (head != "flatten" && head != "global_max") throw std::invalid_argument("unknown head " + head);
  c.head = head == "flatten" ? Head::flatten : Head::global_max;
  if (j.contains("rmsprop")) {
    const auto& r = j["rmsprop"];
    c.rmsprop = {r.value("learning_rate", d.rmsprop.learning_rate), r.value("rho", d.rmsprop.rho),
                 r.value("epsilon", d.rmsprop.epsilon)};
  }
  c.epochs = j.value("epochs", d.epochs);
  c.samples_per_epoch = j.value("samples_per_epoch", d.samples_per_epoch);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
  c.keep_best = j.value("keep_best", d.keep_best);
  c.init_seed = j.value("init_seed", d.init_seed);
  c.threshold = j.value("threshold", d.threshold);
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t channels = 1;
  std::size_t rows = config_.input_n / config_.first_pool.rows;
  std::size_t cols = config_.input_n / config_.first_pool.cols;
  if (rows == 0 || cols == 0) throw std::invalid_argument("first_pool window larger than input");
  layers_.emplace_back(MaxPoolLayer{config_.first_pool});

  const std::size_t k = config_.kernel;
  for (const auto& block : config_.conv_blocks) {
    for (std::size_t r = 0; r < block.convs; ++r) {
      if (rows < k || cols < k) throw std::invalid_argument("feature map too small for convolution");
      layers_.emplace_back(ConvLayer{Tensor({block.channels, channels, k, k}), Tensor({block.channels})});
      layers_.emplace_back(ReluLayer{});
      channels = block.channels;
      rows -= k - 1;
      cols -= k - 1;
    }
    if (rows < 2 || cols < 2) throw std::invalid_argument("feature map too small for 2x2 pooling");
    layers_.emplace_back(MaxPoolLayer{{2, 2}});
    rows /= 2;
    cols /= 2;
  }

  std::size_t width = channels * rows * cols;
  if (config_.head == Head::global_max) {
    layers_.emplace_back(GlobalMaxLayer{});
    width = channels;
  }
  for (auto w : config_.dense) {
    layers_.emplace_back(DenseLayer{Tensor({w, width}), Tensor({w})});
    layers_.emplace_back(ReluLayer{});
    width = w;
  }
  layers_.emplace_back(DenseLayer{Tensor({1, width}), Tensor({1})});
  layers_.emplace_back(SigmoidLayer{});
}

void Network::init_he(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : layers_) {
    auto init = [&](Tensor& w, Tensor& b, std::size_t fan_in) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : w.values()) v = rng.uniform(-limit, limit);
      b.fill(0.0);
    };
    std::visit(overloaded{[&](ConvLayer& l) { init(l.weights, l.bias, l.weights.dim(1) * l.weights.dim(2) * l.weights.dim(3)); },
                          [&](DenseLayer& l) { init(l.weights, l.bias, l.weights.dim(1)); },
                          [](auto&) {}},
               layer);
  }
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    std::visit(overloaded{[&](ConvLayer& l) { out.insert(out.end(), {&l.weights, &l.bias}); },
                          [&](DenseLayer& l) { out.insert(out.end(), {&l.weights, &l.bias}); },
                          [](auto&) {}},
               layer);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

std::vector<Tensor> Network::zero_gradients() const {
  std::vector<Tensor> out;
  for (const auto* p : parameters()) out.emplace_back(p->shape());
  return out;
}

Tensor Network::input_tensor(std::span<const float> pixels) const {
  const std::size_t n = config_.input_n;
  if (pixels.size() != n * n) {
    throw std::invalid_argument("image has " + std::to_string(pixels.size()) + " pixels, network expects " +
                                std::to_string(n) + "x" + std::to_string(n));
  }
  return Tensor({1, n, n}, std::vector<double>(pixels.begin(), pixels.end()));
}

std::vector<Tensor> Network::forward_all(const Tensor& x) const {
  if (x.shape() != Shape{1, config_.input_n, config_.input_n}) {
    throw std::invalid_argument("network input shape mismatch: " + to_string(x.shape()));
  }
  std::vector<Tensor> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(x);
  for (const auto& layer : layers_) {
    const Tensor& in = acts.back();
    acts.push_back(std::visit(overloaded{[&](const MaxPoolLayer& l) { return maxpool2d(in, l.window); },
                                         [&](const ConvLayer& l) { return conv2d_forward(in, l.weights, l.bias); },
                                         [&](const ReluLayer&) { return relu(in); },
                                         [&](const GlobalMaxLayer&) { return global_maxpool(in); },
                                         [&](const DenseLayer& l) { return dense_forward(in, l.weights, l.bias); },
                                         [&](const SigmoidLayer&) { return sigmoid(in); }},
                              layer));
  }
  return acts;
}

double Network::forward(const Tensor& x) const { return forward_all(x).back()[0]; }

void Network::backward(const std::vector<Tensor>& acts, double grad_probability, std::vector<Tensor>& grads) const {
  if (acts.size() != layers_.size() + 1) throw std::invalid_argument("activation count mismatch");
  Tensor grad({1}, std::vector<double>{grad_probability});
  std::size_t param = grads.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Tensor& in = acts[li];
    const Tensor& out = acts[li + 1];
    grad = std::visit(
        overloaded{[&](const MaxPoolLayer& l) { return maxpool2d_backward(in, l.window, grad); },
                   [&](const ConvLayer& l) {
                     auto g = conv2d_backward(in, l.weights, grad);
                     param -= 2;
                     for (std::size_t i = 0; i < g.grad_w.size(); ++i) grads[param][i] += g.grad_w[i];
                     for (std::size_t i = 0; i < g.grad_b.size(); ++i) grads[param + 1][i] += g.grad_b[i];
                     return std::move(g.grad_x);
                   },
                   [&](const ReluLayer&) { return relu_backward(in, grad); },
                   [&](const GlobalMaxLayer&) { return global_maxpool_backward(in, grad); },
                   [&](const DenseLayer& l) {
                     auto g = dense_backward(in, l.weights, grad);
                     param -= 2;
                     for (std::size_t i = 0; i < g.grad_w.size(); ++i) grads[param][i] += g.grad_w[i];
                     for (std::size_t i = 0; i < g.grad_b.size(); ++i) grads[param + 1][i] += g.grad_b[i];
                     return std::move(g.grad_x);
                   },
                   [&](const SigmoidLayer&) { return sigmoid_backward(out, grad); }},
        layers_[li]);
  }
}

void Network::round_to_storage_precision() {
  for (auto* p : parameters()) {
    for (auto& v : p->values()) v = static_cast<double>(static_cast<float>(v));
  }
}

bool Network::parameters_finite() const {
  for (const auto* p : parameters()) {
    if (!p->all_finite()) return false;
  }
  return true;
}

bool Network::operator==(const Network& other) const {
  if (nlohmann::json(config_) != nlohmann::json(other.config_)) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

double predict(const Network& net, std::span<const float> pixels) {
  return net.forward(net.input_tensor(pixels));
}

bool classify(const Network& net, std::span<const float> pixels, double threshold) {
  return predict(net, pixels) >= threshold;
}

Tensor envelope(const Network& net, std::span<const float> pixels) {
  return maxpool2d(net.input_tensor(pixels), net.config().first_pool);
}

void save_model(const Network& net, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic(kMagic);
  w.u16(kVersion);
  w.long_string(nlohmann::json(net.config()).dump());
  const auto params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.u8(static_cast<std::uint8_t>(p->rank()));
    for (auto d : p->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->values()) w.f32(static_cast<float>(v));
  }
  w.save(path);
}

Network load_model(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kMagic);
  const auto version = r.u16();
  if (version != kVersion) throw FormatError("unsupported UTN1 version " + std::to_string(version));
  NetworkConfig config;
  try {
    config = nlohmann::json::parse(r.long_string()).get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError("model config block unreadable: " + std::string(e.what()));
  }
  Network net(config);
  auto params = net.parameters();
  if (r.u32() != params.size()) throw CorruptFileError("parameter tensor count mismatch in " + path.string());
  for (auto* p : params) {
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p->shape()) {
      throw CorruptFileError("parameter shape " + to_string(shape) + " does not match config " + to_string(p->shape()));
    }
    std::vector<float> values(p->size());
    r.f32_array(values);
    for (std::size_t i = 0; i < values.size(); ++i) (*p)[i] = values[i];
  }
  r.expect_end();
  return net;
}

}  // namespace utaug::nn
