#include "utaug/bscan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "utaug/binio.hpp"
#include "utaug/errors.hpp"
#include "utaug/random.hpp"

namespace utaug {

namespace {

constexpr char kMagic[] = "UTB1";
constexpr std::uint16_t kVersion = 1;

std::uint16_t clamp_u16(double v) {
  return static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, 65535.0));
}

// Centred moving average of length `window` along one axis of a row-major
// grid, scaled by 1/sqrt(window) so unit-variance white input stays unit
// variance. Input has `window - 1` extra samples along the averaged axis.
std::vector<double> smooth_axis(const std::vector<double>& in, std::size_t rows,
                                std::size_t cols, std::size_t window, bool along_rows) {
  const double gain = 1.0 / std::sqrt(static_cast<double>(window));
  if (along_rows) {
    const std::size_t out_rows = rows - window + 1;
    std::vector<double> out(out_rows * cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < window; ++r) acc += in[r * cols + c];
      out[c] = acc * gain;
      for (std::size_t r = 1; r < out_rows; ++r) {
        acc += in[(r + window - 1) * cols + c] - in[(r - 1) * cols + c];
        out[r * cols + c] = acc * gain;
      }
    }
    return out;
  }
  const std::size_t out_cols = cols - window + 1;
  std::vector<double> out(rows * out_cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * out_cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < window; ++c) acc += src[c];
    dst[0] = acc * gain;
    for (std::size_t c = 1; c < out_cols; ++c) {
      acc += src[c + window - 1] - src[c - 1];
      dst[c] = acc * gain;
    }
  }
  return out;
}

}  // namespace

BScan::BScan(std::size_t n_scan, std::size_t n_time, std::vector<std::uint16_t> amplitudes,
             ScanMetadata meta)
    : n_scan_(n_scan), n_time_(n_time), amplitudes_(std::move(amplitudes)), meta_(std::move(meta)) {
  if (n_scan_ == 0 || n_time_ == 0) throw std::invalid_argument("B-scan dimensions must be >= 1");
  if (amplitudes_.size() != n_scan_ * n_time_) {
    throw std::invalid_argument("B-scan sample count does not match dimensions");
  }
  if (!(meta_.scan_pitch_mm > 0.0) || !std::isfinite(meta_.scan_pitch_mm)) {
    throw std::invalid_argument("scan pitch must be positive");
  }
}

BScan BScan::filled(std::size_t n_scan, std::size_t n_time, std::uint16_t value, ScanMetadata meta) {
  return BScan(n_scan, n_time, std::vector<std::uint16_t>(n_scan * n_time, value), std::move(meta));
}

bool Region::fits(std::size_t n_scan, std::size_t n_time) const {
  return scan_len >= 1 && time_len >= 1 && scan_start <= n_scan && time_start <= n_time &&
         scan_len <= n_scan - scan_start && time_len <= n_time - time_start;
}

void Region::check_within(const BScan& scan) const {
  if (!fits(scan.n_scan(), scan.n_time())) {
    throw std::invalid_argument("region [" + std::to_string(scan_start) + "+" +
                                std::to_string(scan_len) + ", " + std::to_string(time_start) +
                                "+" + std::to_string(time_len) + "] outside " +
                                std::to_string(scan.n_scan()) + "x" +
                                std::to_string(scan.n_time()) + " scan");
  }
}

Region compose(const Region& outer, const Region& inner) {
  if (!inner.fits(outer.scan_len, outer.time_len)) {
    throw std::invalid_argument("inner region exceeds outer region");
  }
  return {outer.scan_start + inner.scan_start, inner.scan_len, outer.time_start + inner.time_start,
          inner.time_len};
}

void NoiseParams::validate() const {
  if (!(base_std >= 0.0) || !std::isfinite(base_std)) throw std::invalid_argument("base_std must be >= 0");
  if (!std::isfinite(base_mean)) throw std::invalid_argument("base_mean must be finite");
  if (grain_corr_scan < 1 || grain_corr_time < 1) {
    throw std::invalid_argument("correlation lengths must be >= 1");
  }
  for (const auto& band : geometry_echo_bands) {
    if (!(band.amplitude >= 0.0 && band.amplitude <= 65535.0)) {
      throw std::invalid_argument("echo amplitude must fit in 16 bits");
    }
    if (!(band.time_width > 0.0)) throw std::invalid_argument("echo width must be positive");
  }
}

BScan generate_canvas(const NoiseParams& params, std::size_t n_scan, std::size_t n_time,
                      ScanMetadata meta) {
  if (n_scan == 0 || n_time == 0) throw std::invalid_argument("canvas dimensions must be >= 1");
  params.validate();

  const std::size_t rows = n_scan + params.grain_corr_scan - 1;
  const std::size_t cols = n_time + params.grain_corr_time - 1;
  Rng rng(params.seed);
  std::vector<double> white(rows * cols);
  for (auto& v : white) v = rng.normal();

  auto field = smooth_axis(white, rows, cols, params.grain_corr_scan, true);
  field = smooth_axis(field, n_scan, cols, params.grain_corr_time, false);

  std::vector<double> echo(n_time, 0.0);
  for (const auto& band : params.geometry_echo_bands) {
    for (std::size_t t = 0; t < n_time; ++t) {
      const double z = (static_cast<double>(t) - band.time_center) / band.time_width;
      echo[t] += band.amplitude * std::exp(-0.5 * z * z);
    }
  }

  std::vector<std::uint16_t> out(n_scan * n_time);
  for (std::size_t s = 0; s < n_scan; ++s) {
    for (std::size_t t = 0; t < n_time; ++t) {
      const std::size_t i = s * n_time + t;
      out[i] = clamp_u16(params.base_mean + params.base_std * field[i] + echo[t]);
    }
  }
  return BScan(n_scan, n_time, std::move(out), std::move(meta));
}

void write_bscan(const BScan& scan, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(scan.n_scan()));
  w.u32(static_cast<std::uint32_t>(scan.n_time()));
  w.f64(scan.metadata().scan_pitch_mm);
  w.f64(scan.metadata().size_calibration_mm_per_count);
  w.short_string(scan.label());
  w.u16_array(scan.amplitudes());
  w.save(path);
}

BScan read_bscan(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kMagic);
  const auto version = r.u16();
  if (version != kVersion) throw FormatError("unsupported UTB1 version " + std::to_string(version));
  const std::size_t n_scan = r.u32();
  const std::size_t n_time = r.u32();
  ScanMetadata meta;
  meta.scan_pitch_mm = r.f64();
  meta.size_calibration_mm_per_count = r.f64();
  meta.label = r.short_string();
  if (n_scan == 0 || n_time == 0) throw CorruptFileError("zero dimension in " + path.string());
  if (r.remaining() != n_scan * n_time * 2) {
    throw CorruptFileError("payload size mismatch in " + path.string());
  }
  std::vector<std::uint16_t> samples(n_scan * n_time);
  r.u16_array(samples);
  return BScan(n_scan, n_time, std::move(samples), std::move(meta));
}

BScan crop(const BScan& scan, const Region& region) {
  region.check_within(scan);
  std::vector<std::uint16_t> out;
  out.reserve(region.scan_len * region.time_len);
  for (std::size_t s = 0; s < region.scan_len; ++s) {
    const auto src = scan.row(region.scan_start + s).subspan(region.time_start, region.time_len);
    out.insert(out.end(), src.begin(), src.end());
  }
  return BScan(region.scan_len, region.time_len, std::move(out), scan.metadata());
}

BScan downsample(const BScan& scan, std::size_t out_scan, std::size_t out_time,
                 DownsampleKernel kernel) {
  if (out_scan == 0 || out_time == 0) throw std::invalid_argument("output dimensions must be >= 1");
  if (out_scan > scan.n_scan() || out_time > scan.n_time()) {
    throw std::invalid_argument("downsample cannot increase resolution");
  }
  const std::size_t ns = scan.n_scan();
  const std::size_t nt = scan.n_time();
  std::vector<std::size_t> time_edges(out_time + 1);
  for (std::size_t j = 0; j <= out_time; ++j) time_edges[j] = j * nt / out_time;

  std::vector<std::uint16_t> out(out_scan * out_time);
  for (std::size_t i = 0; i < out_scan; ++i) {
    const std::size_t s0 = i * ns / out_scan;
    const std::size_t s1 = (i + 1) * ns / out_scan;
    for (std::size_t j = 0; j < out_time; ++j) {
      const std::size_t t0 = time_edges[j];
      const std::size_t t1 = time_edges[j + 1];
      if (kernel == DownsampleKernel::max) {
        std::uint16_t m = 0;
        for (std::size_t s = s0; s < s1; ++s) {
          const auto row = scan.row(s);
          for (std::size_t t = t0; t < t1; ++t) m = std::max(m, row[t]);
        }
        out[i * out_time + j] = m;
      } else {
        std::uint64_t sum = 0;
        for (std::size_t s = s0; s < s1; ++s) {
          const auto row = scan.row(s);
          for (std::size_t t = t0; t < t1; ++t) sum += row[t];
        }
        const double n = static_cast<double>((s1 - s0) * (t1 - t0));
        out[i * out_time + j] = clamp_u16(static_cast<double>(sum) / n);
      }
    }
  }
  ScanMetadata meta = scan.metadata();
  meta.scan_pitch_mm *= static_cast<double>(ns) / static_cast<double>(out_scan);
  return BScan(out_scan, out_time, std::move(out), std::move(meta));
}

void to_json(nlohmann::json& j, const NoiseParams& p) {
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : p.geometry_echo_bands) {
    bands.push_back({{"time_center", b.time_center}, {"time_width", b.time_width}, {"amplitude", b.amplitude}});
  }
  j = {{"base_mean", p.base_mean},
       {"base_std", p.base_std},
       {"grain_corr_scan", p.grain_corr_scan},
       {"grain_corr_time", p.grain_corr_time},
       {"geometry_echo_bands", bands},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, NoiseParams& p) {
  const NoiseParams d;
  p.base_mean = j.value("base_mean", d.base_mean);
  p.base_std = j.value("base_std", d.base_std);
  p.grain_corr_scan = j.value("grain_corr_scan", d.grain_corr_scan);
  p.grain_corr_time = j.value("grain_corr_time", d.grain_corr_time);
  p.geometry_echo_bands.clear();
  for (const auto& b : j.value("geometry_echo_bands", nlohmann::json::array())) {
    p.geometry_echo_bands.push_back(
        {b.at("time_center").get<double>(), b.at("time_width").get<double>(), b.at("amplitude").get<double>()});
  }
  p.seed = j.value("seed", d.seed);
}

}  // namespace utaug
