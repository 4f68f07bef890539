#pragma once

// B-scan data model: a rectified amplitude grid indexed [scan][time], stored
// scan-major. Instances are immutable once constructed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace utaug {

struct ScanMetadata {
  double scan_pitch_mm = 0.21;
  /// Crack size per scaled amplitude unit. Carried for downstream size
  /// mappings; never interpreted here.
  double size_calibration_mm_per_count = 0.0;
  std::string label;

  bool operator==(const ScanMetadata&) const = default;
};

class BScan {
 public:
  BScan(std::size_t n_scan, std::size_t n_time, std::vector<std::uint16_t> amplitudes,
        ScanMetadata meta = {});
  static BScan filled(std::size_t n_scan, std::size_t n_time, std::uint16_t value,
                      ScanMetadata meta = {});

  std::size_t n_scan() const { return n_scan_; }
  std::size_t n_time() const { return n_time_; }
  std::size_t size() const { return amplitudes_.size(); }

  std::uint16_t at(std::size_t scan, std::size_t time) const {
    return amplitudes_[scan * n_time_ + time];
  }
  std::span<const std::uint16_t> row(std::size_t scan) const {
    return {amplitudes_.data() + scan * n_time_, n_time_};
  }
  std::span<const std::uint16_t> amplitudes() const { return amplitudes_; }

  const ScanMetadata& metadata() const { return meta_; }
  double scan_pitch_mm() const { return meta_.scan_pitch_mm; }
  const std::string& label() const { return meta_.label; }

  /// Copy of the sample grid, for building derived scans.
  std::vector<std::uint16_t> to_vector() const { return amplitudes_; }

  bool operator==(const BScan&) const = default;

 private:
  std::size_t n_scan_;
  std::size_t n_time_;
  std::vector<std::uint16_t> amplitudes_;
  ScanMetadata meta_;
};

/// Rectangular window of a B-scan.
struct Region {
  std::size_t scan_start = 0;
  std::size_t scan_len = 0;
  std::size_t time_start = 0;
  std::size_t time_len = 0;

  static Region full(const BScan& scan) { return {0, scan.n_scan(), 0, scan.n_time()}; }

  bool fits(std::size_t n_scan, std::size_t n_time) const;
  /// Throws std::invalid_argument unless the region is non-empty and inside `scan`.
  void check_within(const BScan& scan) const;

  bool operator==(const Region&) const = default;
};

/// `inner` expressed relative to `outer`, mapped back to the parent frame.
Region compose(const Region& outer, const Region& inner);

struct EchoBand {
  double time_center = 0.0;
  double time_width = 1.0;
  double amplitude = 0.0;
};

/// Stand-in for the structural noise of a coarse-grained weld: Gaussian noise
/// smoothed by separable moving averages, plus horizontal geometry echoes.
/// Not a physics simulation.
struct NoiseParams {
  double base_mean = 2000.0;
  double base_std = 500.0;
  std::size_t grain_corr_scan = 1;
  std::size_t grain_corr_time = 1;
  std::vector<EchoBand> geometry_echo_bands;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const NoiseParams& p);
void from_json(const nlohmann::json& j, NoiseParams& p);

BScan generate_canvas(const NoiseParams& params, std::size_t n_scan, std::size_t n_time,
                      ScanMetadata meta = {});

void write_bscan(const BScan& scan, const std::filesystem::path& path);
BScan read_bscan(const std::filesystem::path& path);

BScan crop(const BScan& scan, const Region& region);

enum class DownsampleKernel { max, mean };

/// Output cell (i, j) summarises input rows [i*n_scan/out_scan, (i+1)*n_scan/out_scan)
/// and the analogous time bin. The max kernel never attenuates a peak.
BScan downsample(const BScan& scan, std::size_t out_scan, std::size_t out_time,
                 DownsampleKernel kernel = DownsampleKernel::max);

}  // namespace utaug
