#include "utaug/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

#include "utaug/errors.hpp"
#include "utaug/parallel.hpp"
#include "utaug/random.hpp"

namespace utaug::nn {

namespace {

void check_images(std::span<const LabeledImage> images, std::size_t n, const char* what) {
  if (images.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  for (const auto& img : images) {
    if (img.n != n || img.pixels.size() != n * n) {
      throw std::invalid_argument(std::string(what) + " image resolution " + std::to_string(img.n) +
                                  " does not match network input " + std::to_string(n));
    }
  }
}

double label(const LabeledImage& img) { return img.has_flaw ? 1.0 : 0.0; }

/// Indices for one epoch: concatenated fresh shuffles, truncated to `count`.
std::vector<std::size_t> epoch_order(std::size_t n_images, std::size_t count, Rng& rng) {
  std::vector<std::size_t> order;
  order.reserve(count);
  std::vector<std::size_t> perm(n_images);
  while (order.size() < count) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    const std::size_t take = std::min(count - order.size(), n_images);
    order.insert(order.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return order;
}

}  // namespace

Evaluation evaluate(const Network& net, std::span<const LabeledImage> images, double threshold) {
  check_images(images, net.config().input_n, "evaluation");
  Evaluation e;
  e.probabilities.resize(images.size());
  parallel_for(images.size(), [&](std::size_t i) { e.probabilities[i] = predict(net, images[i].pixels); });
  std::vector<double> labels(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    labels[i] = label(images[i]);
    const bool positive = e.probabilities[i] >= threshold;
    if (images[i].has_flaw) {
      ++(positive ? e.true_positives : e.false_negatives);
    } else {
      ++(positive ? e.false_positives : e.true_negatives);
    }
  }
  e.loss = bce_loss(e.probabilities, labels).loss;
  e.accuracy = static_cast<double>(e.true_positives + e.true_negatives) / static_cast<double>(images.size());
  return e;
}

TrainResult train(std::span<const LabeledImage> train_images, std::span<const LabeledImage> val_images,
                  const NetworkConfig& config) {
  config.validate();
  check_images(train_images, config.input_n, "training");
  check_images(val_images, config.input_n, "validation");

  Network net(config);
  net.init_he(config.init_seed);
  TrainResult result{net, net.zero_gradients(), {}, 0.0, 0.0, false};

  const auto initial = evaluate(net, val_images, config.threshold);
  result.initial_val_loss = initial.loss;
  result.initial_val_accuracy = initial.accuracy;
  result.selected_val_loss = initial.loss;
  result.selected_val_accuracy = initial.accuracy;
  Network best = net;

  const std::size_t per_epoch = config.samples_per_epoch == 0 ? train_images.size() : config.samples_per_epoch;
  std::size_t perfect_streak = 0;
  std::vector<std::vector<Tensor>> activations(config.batch_size);
  std::vector<std::vector<Tensor>> image_grads(config.batch_size);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const int epoch_index = static_cast<int>(epoch);
    Rng rng(stream_seed(config.init_seed, epoch));
    const auto order = epoch_order(train_images.size(), per_epoch, rng);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      std::vector<double> probs(b), labels(b);
      parallel_for(b, [&](std::size_t i) {
        const auto& img = train_images[order[start + i]];
        activations[i] = net.forward_all(net.input_tensor(img.pixels));
        probs[i] = activations[i].back()[0];
      });
      for (std::size_t i = 0; i < b; ++i) labels[i] = label(train_images[order[start + i]]);
      const auto bce = bce_loss(probs, labels);
      if (!std::isfinite(bce.loss)) {
        throw TrainingDiverged(epoch_index, "non-finite training loss in epoch " + std::to_string(epoch));
      }
      loss_sum += bce.loss * static_cast<double>(b);

      parallel_for(b, [&](std::size_t i) {
        image_grads[i] = net.zero_gradients();
        net.backward(activations[i], bce.grad[i], image_grads[i]);
      });
      auto grads = net.zero_gradients();
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < grads.size(); ++t) {
          auto dst = grads[t].values();
          const auto src = image_grads[i][t].values();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      auto params = net.parameters();
      for (std::size_t t = 0; t < params.size(); ++t) {
        if (!grads[t].all_finite()) {
          throw TrainingDiverged(epoch_index, "non-finite gradient in epoch " + std::to_string(epoch));
        }
        rmsprop_step(params[t]->values(), grads[t].values(), result.optimizer_state[t].values(), config.rmsprop);
      }
    }

    if (!net.parameters_finite()) {
      throw TrainingDiverged(epoch_index, "non-finite parameters after epoch " + std::to_string(epoch));
    }
    const auto val = evaluate(net, val_images, config.threshold);
    if (!std::isfinite(val.loss)) {
      throw TrainingDiverged(epoch_index, "non-finite validation loss in epoch " + std::to_string(epoch));
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.accuracy});
    const bool better = val.accuracy > result.selected_val_accuracy ||
                        (val.accuracy == result.selected_val_accuracy && val.loss < result.selected_val_loss);
    if (!config.keep_best || better) {
      result.selected_epoch = epoch;
      result.selected_val_accuracy = val.accuracy;
      result.selected_val_loss = val.loss;
      if (config.keep_best) best = net;
    }

    perfect_streak = val.accuracy == 1.0 ? perfect_streak + 1 : 0;
    if (config.early_stop_patience > 0 && perfect_streak >= config.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }

  if (config.keep_best) net = std::move(best);
  net.round_to_storage_precision();
  result.network = std::move(net);
  return result;
}

void check_disjoint(const DatasetManifest& train_set, const DatasetManifest& val_set) {
  if (train_set.images.empty() || val_set.images.empty()) throw std::invalid_argument("empty manifest");
  if (!train_set.content_hash.empty() && train_set.content_hash == val_set.content_hash) {
    throw std::invalid_argument("training and validation manifests have identical content");
  }
  std::set<std::filesystem::path> train_files;
  for (std::size_t i = 0; i < train_set.files.size(); ++i) {
    train_files.insert(std::filesystem::weakly_canonical(train_set.file_path(i)));
  }
  for (std::size_t i = 0; i < val_set.files.size(); ++i) {
    if (train_files.count(std::filesystem::weakly_canonical(val_set.file_path(i)))) {
      throw std::invalid_argument("validation file " + val_set.files[i] + " is also a training file");
    }
  }
  std::set<std::string> train_hashes(train_set.file_hashes.begin(), train_set.file_hashes.end());
  for (const auto& h : val_set.file_hashes) {
    if (train_hashes.count(h)) throw std::invalid_argument("training and validation sets share a minibatch file");
  }
}

TrainResult train(const DatasetManifest& train_set, const DatasetManifest& val_set, const NetworkConfig& config) {
  check_disjoint(train_set, val_set);
  const auto train_images = load_images(train_set);
  const auto val_images = load_images(val_set);
  return train(train_images, val_images, config);
}

TrainResult train_with_restarts(std::span<const LabeledImage> train_images,
                                std::span<const LabeledImage> val_images, const NetworkConfig& config,
                                double min_accuracy, std::size_t max_attempts) {
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  std::optional<TrainResult> best;
  NetworkConfig attempt = config;
  for (std::size_t a = 0; a < max_attempts; ++a) {
    attempt.init_seed = a == 0 ? config.init_seed : splitmix64(config.init_seed + a);
    try {
      auto r = train(train_images, val_images, attempt);
      const double acc = r.selected_val_accuracy;
      const double best_acc = best ? best->selected_val_accuracy : -1.0;
      if (acc > best_acc) best = std::move(r);
      if (acc >= min_accuracy) break;
    } catch (const TrainingDiverged&) {
      if (a + 1 == max_attempts && !best) throw;
    }
  }
  return std::move(*best);
}

nlohmann::json history_to_json(const TrainResult& result) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& h : result.history) {
    epochs.push_back({{"epoch", h.epoch},
                      {"train_loss", h.train_loss},
                      {"val_loss", h.val_loss},
                      {"val_accuracy", h.val_accuracy}});
  }
  return {{"config", nlohmann::json(result.network.config())},
          {"initial_val_loss", result.initial_val_loss},
          {"initial_val_accuracy", result.initial_val_accuracy},
          {"early_stopped", result.early_stopped},
          {"selected_epoch", result.selected_epoch},
          {"selected_val_accuracy", result.selected_val_accuracy},
          {"selected_val_loss", result.selected_val_loss},
          {"history", epochs}};
}

}  // namespace utaug::nn
