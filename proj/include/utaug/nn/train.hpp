#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "utaug/dataset.hpp"
#include "utaug/nn/network.hpp"

namespace utaug::nn {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Network network;
  /// RMSProp mean-square accumulators, one per parameter tensor.
  std::vector<Tensor> optimizer_state;
  std::vector<EpochRecord> history;
  double initial_val_loss = 0.0;
  double initial_val_accuracy = 0.0;
  bool early_stopped = false;
  /// Epoch whose parameters were returned; 0 for the initial parameters.
  std::size_t selected_epoch = 0;
  double selected_val_accuracy = 0.0;
  double selected_val_loss = 0.0;
};

struct Evaluation {
  std::vector<double> probabilities;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t true_negatives = 0;
  std::size_t false_negatives = 0;
};

Evaluation evaluate(const Network& net, std::span<const LabeledImage> images, double threshold = 0.5);

/// Minibatch RMSProp on BCE. Each epoch visits samples_per_epoch images drawn
/// without replacement from a fresh shuffle (0 means the whole training set).
/// With keep_best the returned network is the best validation checkpoint.
/// Parameters are rounded to f32 before returning so that a saved model
/// predicts exactly what the returned network predicts.
TrainResult train(std::span<const LabeledImage> train_images, std::span<const LabeledImage> val_images,
                  const NetworkConfig& config);

/// Throws std::invalid_argument if the manifests are empty or share files or content.
void check_disjoint(const DatasetManifest& train_set, const DatasetManifest& val_set);

/// Loads both datasets after checking they do not share files or content.
TrainResult train(const DatasetManifest& train_set, const DatasetManifest& val_set, const NetworkConfig& config);

/// Retries with fresh initialisation seeds until the final validation accuracy
/// reaches `min_accuracy` or `max_attempts` runs are used. Returns the best run.
TrainResult train_with_restarts(std::span<const LabeledImage> train_images,
                                std::span<const LabeledImage> val_images, const NetworkConfig& config,
                                double min_accuracy, std::size_t max_attempts);

nlohmann::json history_to_json(const TrainResult& result);

}  // namespace utaug::nn
