#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "utaug/nn/ops.hpp"
#include "utaug/nn/tensor.hpp"

namespace utaug::nn {

struct ConvBlock {
  std::size_t channels = 8;
  std::size_t convs = 1;  // conv3x3+relu repeats before the 2x2 pool
};

enum class Head { flatten, global_max };

/// Architecture and training hyperparameters. The layer stack is
///   maxpool(first_pool) -> [conv+relu]*convs + maxpool2x2 per block
///   -> flatten | global max -> [dense+relu]* -> dense(1) -> sigmoid
struct NetworkConfig {
  std::size_t input_n = 128;
  /// Envelope pooling window: rows along scan, cols along time.
  Window2d first_pool{2, 4};
  std::vector<ConvBlock> conv_blocks{{8, 1}, {16, 1}, {32, 1}};
  std::size_t kernel = 3;
  std::vector<std::size_t> dense{64};
  Head head = Head::flatten;
  RmsPropConfig rmsprop;
  std::size_t epochs = 30;
  std::size_t samples_per_epoch = 2000;
  std::size_t batch_size = 32;
  /// Stop once validation accuracy has been 1.0 for this many consecutive
  /// epochs; 0 disables early stopping.
  std::size_t early_stop_patience = 0;
  /// Return the parameters of the epoch with the best validation accuracy
  /// (lower validation loss breaks ties) instead of the last epoch's.
  bool keep_best = true;
  std::uint64_t init_seed = 1;
  double threshold = 0.5;

  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct MaxPoolLayer {
  Window2d window;
};
struct ConvLayer {
  Tensor weights;  // [O,C,K,K]
  Tensor bias;     // [O]
};
struct ReluLayer {};
struct GlobalMaxLayer {};
struct DenseLayer {
  Tensor weights;  // [O,N]
  Tensor bias;     // [O]
};
struct SigmoidLayer {};

using Layer = std::variant<MaxPoolLayer, ConvLayer, ReluLayer, GlobalMaxLayer, DenseLayer, SigmoidLayer>;

class Network {
 public:
  /// Builds the layer stack with all parameters zero.
  explicit Network(NetworkConfig config);
  Network() : Network(NetworkConfig{}) {}

  const NetworkConfig& config() const { return config_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// He-style uniform fan-in initialisation, U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
  /// zero biases.
  void init_he(std::uint64_t seed);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
  /// Zero tensors shaped like parameters().
  std::vector<Tensor> zero_gradients() const;

  /// Input image as a [1, N, N] tensor.
  Tensor input_tensor(std::span<const float> pixels) const;

  /// Layer outputs; activations[0] is the input, activations.back() the probability.
  std::vector<Tensor> forward_all(const Tensor& x) const;
  double forward(const Tensor& x) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(probability).
  void backward(const std::vector<Tensor>& activations, double grad_probability,
                std::vector<Tensor>& grads) const;

  /// Rounds every parameter to the nearest 32-bit float.
  void round_to_storage_precision();

  bool parameters_finite() const;

  bool operator==(const Network& other) const;

 private:
  NetworkConfig config_;
  std::vector<Layer> layers_;
};

double predict(const Network& net, std::span<const float> pixels);
bool classify(const Network& net, std::span<const float> pixels, double threshold = 0.5);

/// Output of the envelope pooling layer for an image, shape [1, rows, cols].
Tensor envelope(const Network& net, std::span<const float> pixels);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

}  // namespace utaug::nn
