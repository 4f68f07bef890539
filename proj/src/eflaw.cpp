#include "utaug/eflaw.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "utaug/binio.hpp"
#include "utaug/errors.hpp"

namespace utaug {

namespace {

constexpr char kMagic[] = "UTS1";
constexpr std::uint16_t kVersion = 1;

void check_same_dims(const BScan& a, const BScan& b) {
  if (a.n_scan() != b.n_scan() || a.n_time() != b.n_time()) {
    throw std::invalid_argument("scan dimensions differ");
  }
}

}  // namespace

FlawSignature::FlawSignature(std::size_t scan_len, std::size_t time_len,
                             std::vector<std::int32_t> deltas, double nominal_size_mm,
                             std::string source_label)
    : scan_len_(scan_len),
      time_len_(time_len),
      deltas_(std::move(deltas)),
      nominal_size_mm_(nominal_size_mm),
      source_label_(std::move(source_label)) {
  if (scan_len_ == 0 || time_len_ == 0) throw std::invalid_argument("signature must be non-empty");
  if (deltas_.size() != scan_len_ * time_len_) {
    throw std::invalid_argument("signature delta count does not match shape");
  }
  if (!(nominal_size_mm_ > 0.0) || !std::isfinite(nominal_size_mm_)) {
    throw std::invalid_argument("nominal flaw size must be positive");
  }
}

double linear_size_mapping(double scale, double nominal_size_mm) { return scale * nominal_size_mm; }

FlawSignature extract_flaw(const BScan& flawed, const BScan& blank, const Region& region,
                           double nominal_size_mm, std::string source_label) {
  check_same_dims(flawed, blank);
  region.check_within(flawed);
  std::vector<std::int32_t> deltas;
  deltas.reserve(region.scan_len * region.time_len);
  for (std::size_t s = 0; s < region.scan_len; ++s) {
    const auto f = flawed.row(region.scan_start + s);
    const auto b = blank.row(region.scan_start + s);
    for (std::size_t t = 0; t < region.time_len; ++t) {
      const std::size_t j = region.time_start + t;
      deltas.push_back(static_cast<std::int32_t>(f[j]) - static_cast<std::int32_t>(b[j]));
    }
  }
  return FlawSignature(region.scan_len, region.time_len, std::move(deltas), nominal_size_mm,
                       std::move(source_label));
}

BScan erase_flaw(const BScan& flawed, const BScan& blank_reference, const Region& region) {
  check_same_dims(flawed, blank_reference);
  region.check_within(flawed);
  auto out = flawed.to_vector();
  const std::size_t nt = flawed.n_time();
  for (std::size_t s = region.scan_start; s < region.scan_start + region.scan_len; ++s) {
    const auto ref = blank_reference.row(s);
    std::copy_n(ref.begin() + static_cast<std::ptrdiff_t>(region.time_start), region.time_len,
                out.begin() + static_cast<std::ptrdiff_t>(s * nt + region.time_start));
  }
  return BScan(flawed.n_scan(), nt, std::move(out), flawed.metadata());
}

ImplantResult implant(const BScan& canvas, const FlawSignature& signature, const ImplantSpec& spec,
                      const SizeMapping& size_mapping) {
  if (!(spec.amplitude_scale > 0.0) || !std::isfinite(spec.amplitude_scale)) {
    throw std::invalid_argument("amplitude scale must be positive");
  }
  if (spec.amplitude_scale > 1.0 && !spec.allow_amplification) {
    throw std::invalid_argument("amplitude scale > 1 requires allow_amplification");
  }
  signature.placed_at(spec.target_scan_index, spec.target_time_index).check_within(canvas);

  auto out = canvas.to_vector();
  const std::size_t nt = canvas.n_time();
  bool clipped = false;
  for (std::size_t s = 0; s < signature.scan_len(); ++s) {
    std::uint16_t* row = out.data() + (spec.target_scan_index + s) * nt + spec.target_time_index;
    for (std::size_t t = 0; t < signature.time_len(); ++t) {
      const double scaled = std::round(spec.amplitude_scale * signature.at(s, t));
      const double value = static_cast<double>(row[t]) + scaled;
      if (value < 0.0 || value > 65535.0) clipped = true;
      row[t] = static_cast<std::uint16_t>(std::clamp(value, 0.0, 65535.0));
    }
  }
  return {BScan(canvas.n_scan(), nt, std::move(out), canvas.metadata()),
          size_mapping(spec.amplitude_scale, signature.nominal_size_mm()), clipped};
}

BScan copy_blank_region(const BScan& canvas, const Region& src, std::size_t dst_scan,
                        std::size_t dst_time) {
  src.check_within(canvas);
  const Region dst{dst_scan, src.scan_len, dst_time, src.time_len};
  dst.check_within(canvas);
  auto out = canvas.to_vector();
  const std::size_t nt = canvas.n_time();
  for (std::size_t s = 0; s < src.scan_len; ++s) {
    const auto from = canvas.row(src.scan_start + s).subspan(src.time_start, src.time_len);
    std::copy(from.begin(), from.end(),
              out.begin() + static_cast<std::ptrdiff_t>((dst_scan + s) * nt + dst_time));
  }
  return BScan(canvas.n_scan(), nt, std::move(out), canvas.metadata());
}

FlawSignature truncate_length(const FlawSignature& signature, std::size_t scan_len) {
  if (scan_len == 0 || scan_len > signature.scan_len()) {
    throw std::invalid_argument("truncated length must be in [1, signature length]");
  }
  std::vector<std::int32_t> deltas(signature.deltas().begin(),
                                   signature.deltas().begin() +
                                       static_cast<std::ptrdiff_t>(scan_len * signature.time_len()));
  return FlawSignature(scan_len, signature.time_len(), std::move(deltas),
                       signature.nominal_size_mm(), signature.source_label());
}

FlawSignature synthesize_flaw_kernel(const SyntheticFlawParams& p, std::string label) {
  if (p.scan_len == 0 || p.time_len == 0) throw std::invalid_argument("kernel must be non-empty");
  if (!(p.carrier_period_samples > 0.0 && p.scan_sigma > 0.0 && p.time_sigma > 0.0)) {
    throw std::invalid_argument("kernel periods and widths must be positive");
  }
  if (!(p.peak_amplitude >= 0.0 && p.peak_amplitude <= 65535.0)) {
    throw std::invalid_argument("kernel peak amplitude must fit in 16 bits");
  }
  const double sc = 0.5 * static_cast<double>(p.scan_len - 1);
  const double tc = 0.5 * static_cast<double>(p.time_len - 1) - p.arc_delay;
  std::vector<std::int32_t> deltas(p.scan_len * p.time_len);
  for (std::size_t s = 0; s < p.scan_len; ++s) {
    const double u = (static_cast<double>(s) - sc) / p.scan_sigma;
    const double lateral = std::exp(-0.5 * u * u);
    const double arrival = tc + p.arc_delay * (std::sqrt(1.0 + u * u) - 1.0) / (std::numbers::sqrt2 - 1.0);
    for (std::size_t t = 0; t < p.time_len; ++t) {
      const double dt = static_cast<double>(t) - arrival;
      const double z = dt / p.time_sigma;
      const double carrier = std::abs(std::sin(std::numbers::pi * dt / p.carrier_period_samples));
      deltas[s * p.time_len + t] =
          static_cast<std::int32_t>(std::round(p.peak_amplitude * lateral * std::exp(-0.5 * z * z) * carrier));
    }
  }
  return FlawSignature(p.scan_len, p.time_len, std::move(deltas), p.nominal_size_mm, std::move(label));
}

void write_signature(const FlawSignature& signature, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(signature.scan_len()));
  w.u32(static_cast<std::uint32_t>(signature.time_len()));
  w.f64(signature.nominal_size_mm());
  w.short_string(signature.source_label());
  w.i32_array(signature.deltas());
  w.save(path);
}

FlawSignature read_signature(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kMagic);
  const auto version = r.u16();
  if (version != kVersion) throw FormatError("unsupported UTS1 version " + std::to_string(version));
  const std::size_t scan_len = r.u32();
  const std::size_t time_len = r.u32();
  const double nominal = r.f64();
  auto label = r.short_string();
  if (scan_len == 0 || time_len == 0) throw CorruptFileError("zero dimension in " + path.string());
  if (r.remaining() != scan_len * time_len * 4) {
    throw CorruptFileError("payload size mismatch in " + path.string());
  }
  std::vector<std::int32_t> deltas(scan_len * time_len);
  r.i32_array(deltas);
  return FlawSignature(scan_len, time_len, std::move(deltas), nominal, std::move(label));
}

void to_json(nlohmann::json& j, const SyntheticFlawParams& p) {
  j = {{"scan_len", p.scan_len},
       {"time_len", p.time_len},
       {"peak_amplitude", p.peak_amplitude},
       {"carrier_period_samples", p.carrier_period_samples},
       {"scan_sigma", p.scan_sigma},
       {"time_sigma", p.time_sigma},
       {"arc_delay", p.arc_delay},
       {"nominal_size_mm", p.nominal_size_mm}};
}

void from_json(const nlohmann::json& j, SyntheticFlawParams& p) {
  const SyntheticFlawParams d;
  p.scan_len = j.value("scan_len", d.scan_len);
  p.time_len = j.value("time_len", d.time_len);
  p.peak_amplitude = j.value("peak_amplitude", d.peak_amplitude);
  p.carrier_period_samples = j.value("carrier_period_samples", d.carrier_period_samples);
  p.scan_sigma = j.value("scan_sigma", d.scan_sigma);
  p.time_sigma = j.value("time_sigma", d.time_sigma);
  p.arc_delay = j.value("arc_delay", d.arc_delay);
  p.nominal_size_mm = j.value("nominal_size_mm", d.nominal_size_mm);
}

}  // namespace utaug
