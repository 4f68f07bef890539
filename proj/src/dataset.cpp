#include "utaug/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "utaug/binio.hpp"
#include "utaug/digest.hpp"
#include "utaug/errors.hpp"
#include "utaug/parallel.hpp"
#include "utaug/random.hpp"

namespace utaug {

namespace {

constexpr char kMagic[] = "UTM1";
constexpr std::uint16_t kVersion = 1;
constexpr int kMaxRedraws = 64;

template <typename T>
std::vector<double> normalize_impl(std::span<const T> pixels, double epsilon) {
  if (pixels.empty()) throw std::invalid_argument("cannot normalise an empty image");
  const double n = static_cast<double>(pixels.size());
  double mean = 0.0;
  for (T v : pixels) mean += static_cast<double>(v);
  mean /= n;
  double var = 0.0;
  for (T v : pixels) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  const double denom = std::sqrt(var / n) + epsilon;
  std::vector<double> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = (static_cast<double>(pixels[i]) - mean) / denom;
  return out;
}

std::vector<float> to_f32(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

std::string file_name(const std::string& name, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu.utm", index);
  return name + buf;
}

std::size_t draw_in_range(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.index(hi - lo + 1));
}

LabeledImage make_image(const BScan& canvas, std::span<const FlawSignature> signatures,
                        const DatasetSpec& spec, const std::vector<float>& clean,
                        std::size_t image_index) {
  LabeledImage img;
  img.n = static_cast<std::uint16_t>(spec.image_resolution);
  img.provenance.seed = stream_seed(spec.seed, image_index);
  Rng rng(img.provenance.seed);

  if (rng.bernoulli(spec.crack_fraction)) {
    // A flaw whose scaled deltas vanish after rounding and pooling would make
    // a flawed label on a flawless image; such draws are repeated.
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const auto sig_index = static_cast<std::size_t>(rng.index(signatures.size()));
      const auto& sig = signatures[sig_index];
      ImplantSpec implant_spec;
      implant_spec.amplitude_scale = rng.uniform_left_open(spec.scale_min, spec.scale_max);
      implant_spec.target_scan_index = draw_in_range(rng, spec.placement_scan_min, spec.placement_scan_max);
      implant_spec.target_time_index = draw_in_range(rng, spec.placement_time_min, spec.placement_time_max);
      auto result = implant(canvas, sig, implant_spec);
      auto pixels = preprocess(result.scan, spec);
      if (pixels == clean) continue;

      img.has_flaw = true;
      img.flaw_size_mm = result.effective_size_mm;
      img.flaw_scan_center =
          static_cast<std::int32_t>(implant_spec.target_scan_index + sig.scan_len() / 2);
      img.provenance.signature_index = static_cast<int>(sig_index);
      img.provenance.scale = implant_spec.amplitude_scale;
      img.provenance.placement_scan = implant_spec.target_scan_index;
      img.provenance.placement_time = implant_spec.target_time_index;
      img.provenance.clipped = result.clipped;
      img.pixels = to_f32(normalize(pixels, spec.normalization_epsilon));
      return img;
    }
    throw std::invalid_argument("implanted flaws remain invisible after preprocessing; raise scale_min");
  }

  if (rng.bernoulli(spec.control_copy_fraction)) {
    const Region& crop_region = spec.crop_region;
    const std::size_t len_s = spec.control_copy_scan_len;
    const std::size_t len_t = spec.control_copy_time_len;
    const std::size_t src_s = draw_in_range(rng, crop_region.scan_start, crop_region.scan_start + crop_region.scan_len - len_s);
    const std::size_t src_t = draw_in_range(rng, crop_region.time_start, crop_region.time_start + crop_region.time_len - len_t);
    const std::size_t dst_s = draw_in_range(rng, spec.placement_scan_min, spec.placement_scan_max);
    const std::size_t dst_t = draw_in_range(rng, spec.placement_time_min, spec.placement_time_max);
    const auto copied = copy_blank_region(canvas, Region{src_s, len_s, src_t, len_t}, dst_s, dst_t);
    img.is_control_copy = true;
    img.provenance.placement_scan = dst_s;
    img.provenance.placement_time = dst_t;
    img.provenance.control_src_scan = src_s;
    img.provenance.control_src_time = src_t;
    img.pixels = to_f32(normalize(preprocess(copied, spec), spec.normalization_epsilon));
    return img;
  }

  img.pixels = to_f32(normalize(clean, spec.normalization_epsilon));
  return img;
}

void check_spec_against(const BScan& canvas, std::span<const FlawSignature> signatures,
                        const DatasetSpec& spec) {
  spec.validate();
  spec.crop_region.check_within(canvas);
  if (signatures.empty() && spec.crack_fraction > 0.0) {
    throw std::invalid_argument("crack_fraction > 0 needs at least one flaw signature");
  }
  for (const auto& sig : signatures) {
    if (spec.placement_scan_max + sig.scan_len() > canvas.n_scan() ||
        spec.placement_time_max + sig.time_len() > canvas.n_time()) {
      throw std::invalid_argument("placement range lets a signature leave the canvas");
    }
  }
  if (spec.control_copy_fraction > 0.0) {
    if (spec.control_copy_scan_len > spec.crop_region.scan_len ||
        spec.control_copy_time_len > spec.crop_region.time_len ||
        spec.placement_scan_max + spec.control_copy_scan_len > canvas.n_scan() ||
        spec.placement_time_max + spec.control_copy_time_len > canvas.n_time()) {
      throw std::invalid_argument("control copy window does not fit the canvas");
    }
  }
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_images < 1) throw std::invalid_argument("n_images must be >= 1");
  if (!(crack_fraction >= 0.0 && crack_fraction < 1.0)) {
    throw std::invalid_argument("crack_fraction must be in [0, 1)");
  }
  if (!(scale_min >= 0.0 && scale_min < scale_max && scale_max <= 1.0)) {
    throw std::invalid_argument("scale range must satisfy 0 <= min < max <= 1");
  }
  if (placement_scan_min > placement_scan_max || placement_time_min > placement_time_max) {
    throw std::invalid_argument("placement range is empty");
  }
  if (!(control_copy_fraction >= 0.0 && control_copy_fraction <= 1.0)) {
    throw std::invalid_argument("control_copy_fraction must be in [0, 1]");
  }
  if (control_copy_fraction > 0.0 && (control_copy_scan_len < 1 || control_copy_time_len < 1)) {
    throw std::invalid_argument("control copy window must be non-empty");
  }
  if (image_resolution < 1 || image_resolution > 0xFFFF) {
    throw std::invalid_argument("image_resolution must be in [1, 65535]");
  }
  if (crop_region.scan_len < image_resolution || crop_region.time_len < image_resolution) {
    throw std::invalid_argument("crop region smaller than the image resolution");
  }
  if (!(normalization_epsilon > 0.0)) throw std::invalid_argument("normalization_epsilon must be > 0");
  if (minibatch_size < 1) throw std::invalid_argument("minibatch_size must be >= 1");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{
      {"n_images", s.n_images},
      {"crack_fraction", s.crack_fraction},
      {"scale_min", s.scale_min},
      {"scale_max", s.scale_max},
      {"placement_scan", {s.placement_scan_min, s.placement_scan_max}},
      {"placement_time", {s.placement_time_min, s.placement_time_max}},
      {"control_copy_fraction", s.control_copy_fraction},
      {"control_copy_window", {s.control_copy_scan_len, s.control_copy_time_len}},
      {"image_resolution", s.image_resolution},
      {"crop_region",
       {s.crop_region.scan_start, s.crop_region.scan_len, s.crop_region.time_start, s.crop_region.time_len}},
      {"downsample_kernel", s.downsample_kernel == DownsampleKernel::max ? "max" : "mean"},
      {"normalization_epsilon", s.normalization_epsilon},
      {"minibatch_size", s.minibatch_size},
      {"seed", s.seed},
  };
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.n_images = j.at("n_images").get<std::size_t>();
  s.crack_fraction = j.at("crack_fraction").get<double>();
  s.scale_min = j.at("scale_min").get<double>();
  s.scale_max = j.at("scale_max").get<double>();
  s.placement_scan_min = j.at("placement_scan").at(0).get<std::size_t>();
  s.placement_scan_max = j.at("placement_scan").at(1).get<std::size_t>();
  s.placement_time_min = j.at("placement_time").at(0).get<std::size_t>();
  s.placement_time_max = j.at("placement_time").at(1).get<std::size_t>();
  s.control_copy_fraction = j.at("control_copy_fraction").get<double>();
  s.control_copy_scan_len = j.at("control_copy_window").at(0).get<std::size_t>();
  s.control_copy_time_len = j.at("control_copy_window").at(1).get<std::size_t>();
  s.image_resolution = j.at("image_resolution").get<std::size_t>();
  const auto& c = j.at("crop_region");
  s.crop_region = {c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(), c.at(2).get<std::size_t>(),
                   c.at(3).get<std::size_t>()};
  const auto kernel = j.at("downsample_kernel").get<std::string>();
  if (kernel != "max" && kernel != "mean") throw std::invalid_argument("unknown downsample kernel " + kernel);
  s.downsample_kernel = kernel == "max" ? DownsampleKernel::max : DownsampleKernel::mean;
  s.normalization_epsilon = j.at("normalization_epsilon").get<double>();
  s.minibatch_size = j.at("minibatch_size").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

double ImageGeometry::column_center_mm(std::size_t column) const {
  const double center_index = static_cast<double>(scan_origin_index) +
                              (static_cast<double>(column) + 0.5) * static_cast<double>(scan_len) /
                                  static_cast<double>(n);
  return center_index * scan_pitch_mm;
}

void to_json(nlohmann::json& j, const ImageGeometry& g) {
  j = {{"scan_origin_index", g.scan_origin_index},
       {"scan_len", g.scan_len},
       {"n", g.n},
       {"scan_pitch_mm", g.scan_pitch_mm}};
}

void from_json(const nlohmann::json& j, ImageGeometry& g) {
  g.scan_origin_index = j.at("scan_origin_index").get<std::size_t>();
  g.scan_len = j.at("scan_len").get<std::size_t>();
  g.n = j.at("n").get<std::size_t>();
  g.scan_pitch_mm = j.at("scan_pitch_mm").get<double>();
}

std::vector<float> preprocess(const BScan& scan, const DatasetSpec& spec) {
  const auto cropped = crop(scan, spec.crop_region);
  const auto small = downsample(cropped, spec.image_resolution, spec.image_resolution, spec.downsample_kernel);
  return std::vector<float>(small.amplitudes().begin(), small.amplitudes().end());
}

std::vector<double> normalize(std::span<const double> pixels, double epsilon) {
  return normalize_impl(pixels, epsilon);
}

std::vector<double> normalize(std::span<const float> pixels, double epsilon) {
  return normalize_impl(pixels, epsilon);
}

std::vector<LabeledImage> generate_images(const BScan& canvas, std::span<const FlawSignature> signatures,
                                          const DatasetSpec& spec) {
  check_spec_against(canvas, signatures, spec);
  const auto clean = preprocess(canvas, spec);
  std::vector<LabeledImage> images(spec.n_images);
  parallel_for(spec.n_images, [&](std::size_t i) { images[i] = make_image(canvas, signatures, spec, clean, i); });
  return images;
}

void write_minibatch(std::span<const LabeledImage> images, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(images.size()));
  const std::uint16_t n = images.empty() ? 0 : images.front().n;
  w.u16(n);
  for (const auto& img : images) {
    if (img.n != n || img.pixels.size() != static_cast<std::size_t>(n) * n) {
      throw std::invalid_argument("images in one minibatch must share resolution");
    }
    w.u8(img.has_flaw ? 1 : 0);
    w.f64(img.flaw_size_mm);
    w.u8(img.is_control_copy ? 1 : 0);
    w.i32(img.flaw_scan_center.value_or(-1));
    w.f32_array(img.pixels);
  }
  w.save(path);
}

std::vector<LabeledImage> read_minibatch(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kMagic);
  const auto version = r.u16();
  if (version != kVersion) throw FormatError("unsupported UTM1 version " + std::to_string(version));
  const std::size_t count = r.u32();
  const std::uint16_t n = r.u16();
  const std::size_t record_bytes = 1 + 8 + 1 + 4 + 4 * static_cast<std::size_t>(n) * n;
  if (r.remaining() != count * record_bytes) {
    throw CorruptFileError("image count in header disagrees with payload size in " + path.string());
  }
  std::vector<LabeledImage> images(count);
  for (auto& img : images) {
    img.n = n;
    const auto label = r.u8();
    if (label > 1) throw CorruptFileError("bad label byte in " + path.string());
    img.has_flaw = label == 1;
    img.flaw_size_mm = r.f64();
    img.is_control_copy = r.u8() == 1;
    const auto center = r.i32();
    if (center >= 0) img.flaw_scan_center = center;
    img.pixels.resize(static_cast<std::size_t>(n) * n);
    r.f32_array(img.pixels);
  }
  r.expect_end();
  return images;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& e : m.images) {
    const auto& p = e.provenance;
    images.push_back({
        {"file", e.file_index},
        {"index", e.index_in_file},
        {"has_flaw", e.has_flaw},
        {"flaw_size_mm", e.flaw_size_mm},
        {"flaw_scan_center", e.flaw_scan_center ? nlohmann::json(*e.flaw_scan_center) : nlohmann::json()},
        {"control_copy", e.is_control_copy},
        {"signature", p.signature_index},
        {"scale", p.scale},
        {"placement", {p.placement_scan, p.placement_time}},
        {"control_src", {p.control_src_scan, p.control_src_time}},
        {"clipped", p.clipped},
        {"seed", p.seed},
    });
  }
  return {{"format", "utaug-dataset-manifest"},
          {"version", 1},
          {"spec", m.spec},
          {"geometry", m.geometry},
          {"canvas_label", m.canvas_label},
          {"files", m.files},
          {"file_hashes", m.file_hashes},
          {"content_hash", m.content_hash},
          {"images", std::move(images)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  if (j.value("format", "") != "utaug-dataset-manifest") throw FormatError("not a dataset manifest");
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  m.spec = j.at("spec").get<DatasetSpec>();
  m.geometry = j.at("geometry").get<ImageGeometry>();
  m.canvas_label = j.at("canvas_label").get<std::string>();
  m.files = j.at("files").get<std::vector<std::string>>();
  m.file_hashes = j.at("file_hashes").get<std::vector<std::string>>();
  m.content_hash = j.at("content_hash").get<std::string>();
  for (const auto& e : j.at("images")) {
    ManifestEntry entry;
    entry.file_index = e.at("file").get<std::size_t>();
    entry.index_in_file = e.at("index").get<std::size_t>();
    entry.has_flaw = e.at("has_flaw").get<bool>();
    entry.flaw_size_mm = e.at("flaw_size_mm").get<double>();
    if (!e.at("flaw_scan_center").is_null()) entry.flaw_scan_center = e.at("flaw_scan_center").get<std::int32_t>();
    entry.is_control_copy = e.at("control_copy").get<bool>();
    auto& p = entry.provenance;
    p.signature_index = e.at("signature").get<int>();
    p.scale = e.at("scale").get<double>();
    p.placement_scan = e.at("placement").at(0).get<std::size_t>();
    p.placement_time = e.at("placement").at(1).get<std::size_t>();
    p.control_src_scan = e.at("control_src").at(0).get<std::size_t>();
    p.control_src_time = e.at("control_src").at(1).get<std::size_t>();
    p.clipped = e.at("clipped").get<bool>();
    p.seed = e.at("seed").get<std::uint64_t>();
    if (entry.file_index >= m.files.size()) throw CorruptFileError("manifest references a missing file");
    m.images.push_back(entry);
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(1) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  return manifest_from_json(j, path.parent_path());
}

DatasetManifest build_dataset(const BScan& canvas, std::span<const FlawSignature> signatures,
                              const DatasetSpec& spec, const std::filesystem::path& out_dir,
                              const std::string& name) {
  auto images = generate_images(canvas, signatures, spec);
  std::filesystem::create_directories(out_dir);

  DatasetManifest m;
  m.spec = spec;
  m.base_dir = out_dir;
  m.canvas_label = canvas.label();
  m.geometry = {spec.crop_region.scan_start, spec.crop_region.scan_len, spec.image_resolution,
                canvas.scan_pitch_mm()};

  Sha256 content;
  const std::size_t n_files = (images.size() + spec.minibatch_size - 1) / spec.minibatch_size;
  for (std::size_t f = 0; f < n_files; ++f) {
    const std::size_t begin = f * spec.minibatch_size;
    const std::size_t end = std::min(images.size(), begin + spec.minibatch_size);
    const auto fname = file_name(name, f);
    write_minibatch(std::span(images).subspan(begin, end - begin), out_dir / fname);
    const auto digest = sha256_file(out_dir / fname);
    content.update(digest);
    m.files.push_back(fname);
    m.file_hashes.push_back(digest);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& img = images[i];
      m.images.push_back({f, i - begin, img.has_flaw, img.flaw_size_mm, img.flaw_scan_center,
                          img.is_control_copy, img.provenance});
    }
  }
  m.content_hash = content.finish();
  write_manifest(m, out_dir / (name + ".manifest.json"));
  return m;
}

std::vector<LabeledImage> load_images(const DatasetManifest& manifest) {
  std::vector<std::vector<LabeledImage>> files(manifest.files.size());
  std::vector<LabeledImage> out;
  out.reserve(manifest.images.size());
  for (const auto& e : manifest.images) {
    auto& batch = files[e.file_index];
    if (batch.empty()) batch = read_minibatch(manifest.file_path(e.file_index));
    if (e.index_in_file >= batch.size()) throw CorruptFileError("manifest index beyond minibatch size");
    LabeledImage img = std::move(batch[e.index_in_file]);
    if (img.has_flaw != e.has_flaw) throw CorruptFileError("manifest label disagrees with minibatch file");
    img.provenance = e.provenance;
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace utaug
