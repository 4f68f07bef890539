#pragma once

// Compiles augmented, labelled training images from a flawless canvas and a
// set of flaw signatures, and stores them in fixed-size minibatch files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "utaug/bscan.hpp"
#include "utaug/eflaw.hpp"

namespace utaug {

/// How an image was made. Not stored in minibatch files; echoed in the manifest.
struct Provenance {
  int signature_index = -1;
  double scale = 0.0;
  std::size_t placement_scan = 0;
  std::size_t placement_time = 0;
  std::uint64_t seed = 0;
  bool clipped = false;
  /// Source corner of a control copy.
  std::size_t control_src_scan = 0;
  std::size_t control_src_time = 0;

  bool operator==(const Provenance&) const = default;
};

struct LabeledImage {
  std::uint16_t n = 0;
  std::vector<float> pixels;  // n*n, [scan][time]
  bool has_flaw = false;
  double flaw_size_mm = 0.0;
  /// Canvas scan index of the flaw centre.
  std::optional<std::int32_t> flaw_scan_center;
  bool is_control_copy = false;
  Provenance provenance;

  bool operator==(const LabeledImage&) const = default;
};

struct DatasetSpec {
  std::size_t n_images = 1000;
  double crack_fraction = 0.5;
  double scale_min = 0.1;  // exclusive
  double scale_max = 1.0;  // inclusive
  /// Inclusive range of the signature's top-left corner on the canvas.
  std::size_t placement_scan_min = 0;
  std::size_t placement_scan_max = 0;
  std::size_t placement_time_min = 0;
  std::size_t placement_time_max = 0;
  double control_copy_fraction = 0.1;
  std::size_t control_copy_scan_len = 32;
  std::size_t control_copy_time_len = 48;
  std::size_t image_resolution = 128;
  Region crop_region;
  DownsampleKernel downsample_kernel = DownsampleKernel::max;
  double normalization_epsilon = 1e-5;
  std::size_t minibatch_size = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

/// Maps image columns back to scan positions on the canvas.
struct ImageGeometry {
  std::size_t scan_origin_index = 0;
  std::size_t scan_len = 1;
  std::size_t n = 1;
  double scan_pitch_mm = 0.21;

  double column_center_mm(std::size_t column) const;
  double scan_start_mm() const { return static_cast<double>(scan_origin_index) * scan_pitch_mm; }
  double scan_end_mm() const {
    return static_cast<double>(scan_origin_index + scan_len) * scan_pitch_mm;
  }
};

void to_json(nlohmann::json& j, const ImageGeometry& g);
void from_json(const nlohmann::json& j, ImageGeometry& g);

/// crop -> downsample to N x N -> float. Normalisation is separate.
std::vector<float> preprocess(const BScan& scan, const DatasetSpec& spec);

/// (x - mean) / (std + epsilon), population standard deviation.
std::vector<double> normalize(std::span<const double> pixels, double epsilon = 1e-5);
std::vector<double> normalize(std::span<const float> pixels, double epsilon = 1e-5);

struct ManifestEntry {
  std::size_t file_index = 0;
  std::size_t index_in_file = 0;
  bool has_flaw = false;
  double flaw_size_mm = 0.0;
  std::optional<std::int32_t> flaw_scan_center;
  bool is_control_copy = false;
  Provenance provenance;
};

struct DatasetManifest {
  DatasetSpec spec;
  ImageGeometry geometry;
  std::string canvas_label;
  std::vector<std::string> files;  // relative to the manifest's directory
  std::vector<std::string> file_hashes;
  std::vector<ManifestEntry> images;
  std::string content_hash;
  std::filesystem::path base_dir;  // not serialised

  std::filesystem::path file_path(std::size_t file_index) const { return base_dir / files.at(file_index); }
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// All images of a build, in index order. Pure function of its arguments.
std::vector<LabeledImage> generate_images(const BScan& canvas, std::span<const FlawSignature> signatures,
                                          const DatasetSpec& spec);

/// Generates the images and writes `<name>_NNNN.utm` minibatch files and
/// `<name>.manifest.json` into `out_dir`.
DatasetManifest build_dataset(const BScan& canvas, std::span<const FlawSignature> signatures,
                              const DatasetSpec& spec, const std::filesystem::path& out_dir,
                              const std::string& name);

void write_minibatch(std::span<const LabeledImage> images, const std::filesystem::path& path);
std::vector<LabeledImage> read_minibatch(const std::filesystem::path& path);

/// Every image referenced by a manifest, in manifest order, with provenance
/// restored from the manifest.
std::vector<LabeledImage> load_images(const DatasetManifest& manifest);

}  // namespace utaug
