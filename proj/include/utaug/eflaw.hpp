#pragma once

// Virtual flaws: a flaw signature is the point-wise difference between a
// flawed scan and a flawless reference over a window. Signatures can be
// implanted, amplitude scaled, anywhere on a canvas.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "utaug/bscan.hpp"

namespace utaug {

class FlawSignature {
 public:
  FlawSignature(std::size_t scan_len, std::size_t time_len, std::vector<std::int32_t> deltas,
                double nominal_size_mm, std::string source_label = {});

  std::size_t scan_len() const { return scan_len_; }
  std::size_t time_len() const { return time_len_; }
  std::int32_t at(std::size_t scan, std::size_t time) const { return deltas_[scan * time_len_ + time]; }
  std::span<const std::int32_t> deltas() const { return deltas_; }
  double nominal_size_mm() const { return nominal_size_mm_; }
  const std::string& source_label() const { return source_label_; }

  /// Region this signature covers when its top-left corner sits at (scan, time).
  Region placed_at(std::size_t scan, std::size_t time) const {
    return {scan, scan_len_, time, time_len_};
  }

  bool operator==(const FlawSignature&) const = default;

 private:
  std::size_t scan_len_;
  std::size_t time_len_;
  std::vector<std::int32_t> deltas_;
  double nominal_size_mm_;
  std::string source_label_;
};

struct ImplantSpec {
  std::size_t target_scan_index = 0;
  std::size_t target_time_index = 0;
  double amplitude_scale = 1.0;
  /// Scales above 1 extrapolate beyond the recorded flaw and are refused
  /// unless explicitly enabled.
  bool allow_amplification = false;
};

/// Maps (amplitude scale, nominal size) to the size label of the implanted flaw.
using SizeMapping = std::function<double(double scale, double nominal_size_mm)>;

/// Size proportional to amplitude scale.
double linear_size_mapping(double scale, double nominal_size_mm);

struct ImplantResult {
  BScan scan;
  double effective_size_mm = 0.0;
  bool clipped = false;
};

FlawSignature extract_flaw(const BScan& flawed, const BScan& blank, const Region& region,
                           double nominal_size_mm, std::string source_label = {});

/// `flawed` with `region` replaced by the corresponding samples of `blank_reference`.
BScan erase_flaw(const BScan& flawed, const BScan& blank_reference, const Region& region);

/// Adds round(scale * delta) to each covered sample, saturating to [0, 65535].
/// Rounding is half away from zero.
ImplantResult implant(const BScan& canvas, const FlawSignature& signature, const ImplantSpec& spec,
                      const SizeMapping& size_mapping = linear_size_mapping);

/// Copies `src` onto the window whose top-left corner is (dst_scan, dst_time).
/// Overlapping windows read from the unmodified canvas.
BScan copy_blank_region(const BScan& canvas, const Region& src, std::size_t dst_scan,
                        std::size_t dst_time);

/// Shortens a signature to its first `scan_len` scan lines.
FlawSignature truncate_length(const FlawSignature& signature, std::size_t scan_len);

/// Shape of a synthetic crack-tip echo used to bootstrap signatures when no
/// physically scanned flaw is available: a rectified carrier under a Gaussian
/// envelope whose arrival time bends away from the centre line like a
/// diffraction arc.
struct SyntheticFlawParams {
  std::size_t scan_len = 41;
  std::size_t time_len = 64;
  double peak_amplitude = 8000.0;
  double carrier_period_samples = 14.0;
  double scan_sigma = 6.0;
  double time_sigma = 6.0;
  /// Arrival-time delay in samples at one scan_sigma from the centre.
  double arc_delay = 3.0;
  double nominal_size_mm = 4.0;
};

void to_json(nlohmann::json& j, const SyntheticFlawParams& p);
void from_json(const nlohmann::json& j, SyntheticFlawParams& p);

FlawSignature synthesize_flaw_kernel(const SyntheticFlawParams& params, std::string label = {});

void write_signature(const FlawSignature& signature, const std::filesystem::path& path);
FlawSignature read_signature(const std::filesystem::path& path);

}  // namespace utaug
