#pragma once

// Desk-scale end-to-end experiment: synthetic canvas, bootstrap flaw
// signatures, augmented datasets, training, and a blind trial answered by
// the trained classifier.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "utaug/bscan.hpp"
#include "utaug/dataset.hpp"
#include "utaug/eflaw.hpp"
#include "utaug/nn/network.hpp"
#include "utaug/nn/train.hpp"
#include "utaug/trial.hpp"

namespace utaug {

struct DeskConfig {
  NoiseParams noise;
  std::size_t canvas_scan = 512;
  std::size_t canvas_time = 256;
  double scan_pitch_mm = 0.21;
  std::vector<SyntheticFlawParams> signatures;
  /// Top-left scan/time index where each bootstrap kernel is implanted before extraction.
  std::size_t bootstrap_scan = 200;
  std::size_t bootstrap_time = 60;
  DatasetSpec train_spec;
  DatasetSpec val_spec;
  DatasetSpec trial_pool_spec;
  nn::NetworkConfig network;
  std::size_t trial_images = 200;
  std::size_t trial_cracks = 86;
  std::uint64_t trial_seed = 0;
  TrialScoring scoring;
  double sweep_step = 0.05;
};

nlohmann::json desk_config_to_json(const DeskConfig& c);
DeskConfig desk_config_from_json(const nlohmann::json& j);

/// The reference desk configuration; every seed is derived from `seed`.
DeskConfig default_desk_config(std::uint64_t seed = 20240607);

struct SweepPoint {
  double threshold = 0.0;
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t false_calls = 0;
  double a90_95_mm = 0.0;
  std::string method;
};

/// Presence-only hit/miss scoring of trial probabilities over thresholds.
/// The first point is the smallest threshold with no false calls.
std::vector<SweepPoint> threshold_sweep(std::span<const double> probabilities, std::span<const TrialTruth> truth,
                                        double step, std::size_t zero_misses);

nlohmann::json sweep_to_json(std::span<const SweepPoint> sweep);

struct DeskResult {
  std::filesystem::path out_dir;
  std::string canvas_hash;
  std::vector<std::string> signature_hashes;
  std::string train_hash;
  std::string val_hash;
  std::string trial_pool_hash;
  std::string model_hash;
  nn::TrainResult training;
  std::string trial_id;
  std::string session_id;
  nlohmann::json report;
  std::string report_hash;
  std::vector<SweepPoint> sweep;
  double seconds = 0.0;
};

DeskResult run_desk_experiment(const DeskConfig& config, const std::filesystem::path& out_dir,
                               std::ostream* log = nullptr);

nlohmann::json desk_summary_json(const DeskResult& r);

}  // namespace utaug
