#include "utaug/trial.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "utaug/digest.hpp"
#include "utaug/errors.hpp"
#include "utaug/random.hpp"

namespace utaug {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_subject_id(const std::string& s) {
  if (s.empty() || s.size() > 64) throw std::invalid_argument("subject_id must be 1-64 characters");
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.' || c == '@';
    if (!ok) throw std::invalid_argument("subject_id may only contain letters, digits and -_.@");
  }
}

nlohmann::json truth_to_json(const TrialTruth& t) {
  return {{"has_flaw", t.has_flaw}, {"size_mm", t.size_mm}, {"scan_center_mm", t.scan_center_mm}};
}

TrialTruth truth_from_json(const nlohmann::json& j) {
  return {j.at("has_flaw").get<bool>(), j.at("size_mm").get<double>(), j.at("scan_center_mm").get<double>()};
}

nlohmann::json scoring_to_json(const TrialScoring& s) {
  return {{"scan_tolerance_mm", s.scan_tolerance_mm},
          {"presence_only", s.presence_only},
          {"zero_misses", s.zero_misses}};
}

TrialScoring scoring_from_json(const nlohmann::json& j) {
  TrialScoring s;
  s.scan_tolerance_mm = j.value("scan_tolerance_mm", s.scan_tolerance_mm);
  s.presence_only = j.value("presence_only", s.presence_only);
  s.zero_misses = j.value("zero_misses", s.zero_misses);
  if (!(s.scan_tolerance_mm >= 0.0)) throw std::invalid_argument("scan_tolerance_mm must be >= 0");
  return s;
}

}  // namespace

std::string to_string(TrialMode mode) { return mode == TrialMode::normal ? "normal" : "learning"; }

TrialMode trial_mode_from_string(const std::string& s) {
  if (s == "normal") return TrialMode::normal;
  if (s == "learning") return TrialMode::learning;
  throw std::invalid_argument("mode must be 'normal' or 'learning', got '" + s + "'");
}

std::string trial_image_id(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "img-%04zu", i);
  return buf;
}

std::vector<TruthEntry> TrialSet::truth_entries() const {
  std::vector<TruthEntry> out;
  out.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out.push_back({trial_image_id(i), truth[i].has_flaw, truth[i].size_mm, truth[i].scan_center_mm});
  }
  return out;
}

nlohmann::json trial_to_json(const TrialSet& t) {
  nlohmann::json truth = nlohmann::json::array();
  for (const auto& e : t.truth) truth.push_back(truth_to_json(e));
  return {{"trial_id", t.trial_id},
          {"manifest_path", t.manifest_path.string()},
          {"dataset_hash", t.dataset_hash},
          {"image_refs", t.image_refs},
          {"truth", truth},
          {"mode", to_string(t.mode)},
          {"n_with_cracks", t.n_with_cracks},
          {"seed", t.seed},
          {"scoring", scoring_to_json(t.scoring)},
          {"geometry", t.geometry},
          {"spec_echo", t.spec_echo}};
}

TrialSet trial_from_json(const nlohmann::json& j) {
  TrialSet t;
  t.trial_id = j.at("trial_id").get<std::string>();
  t.manifest_path = j.at("manifest_path").get<std::string>();
  t.dataset_hash = j.at("dataset_hash").get<std::string>();
  t.image_refs = j.at("image_refs").get<std::vector<std::size_t>>();
  for (const auto& e : j.at("truth")) t.truth.push_back(truth_from_json(e));
  if (t.truth.size() != t.image_refs.size()) throw std::invalid_argument("trial truth and image lists differ");
  t.mode = trial_mode_from_string(j.at("mode").get<std::string>());
  t.n_with_cracks = j.at("n_with_cracks").get<std::size_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.scoring = scoring_from_json(j.at("scoring"));
  t.geometry = j.at("geometry").get<ImageGeometry>();
  t.spec_echo = j.value("spec_echo", nlohmann::json::object());
  return t;
}

TrialSet create_trial(const DatasetManifest& manifest, const std::filesystem::path& manifest_path,
                      std::size_t n_images, std::size_t n_with_cracks, TrialMode mode, std::uint64_t seed,
                      const TrialScoring& scoring) {
  if (n_images == 0) throw std::invalid_argument("a trial needs at least one image");
  if (n_with_cracks > n_images) throw std::invalid_argument("n_with_cracks exceeds n_images");
  if (!(scoring.scan_tolerance_mm >= 0.0)) throw std::invalid_argument("scan_tolerance_mm must be >= 0");
  std::vector<std::size_t> flawed, blank;
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    const auto& e = manifest.images[i];
    if (e.has_flaw) {
      if (!e.flaw_scan_center) throw std::invalid_argument("flawed manifest entry without a scan centre");
      flawed.push_back(i);
    } else {
      blank.push_back(i);
    }
  }
  const std::size_t n_blank = n_images - n_with_cracks;
  if (flawed.size() < n_with_cracks || blank.size() < n_blank) {
    throw std::invalid_argument("manifest holds " + std::to_string(flawed.size()) + " flawed and " +
                                std::to_string(blank.size()) + " blank images; trial needs " +
                                std::to_string(n_with_cracks) + " and " + std::to_string(n_blank));
  }

  Rng rng(seed);
  rng.shuffle(flawed);
  rng.shuffle(blank);
  std::vector<std::size_t> refs(flawed.begin(), flawed.begin() + static_cast<std::ptrdiff_t>(n_with_cracks));
  refs.insert(refs.end(), blank.begin(), blank.begin() + static_cast<std::ptrdiff_t>(n_blank));
  rng.shuffle(refs);

  TrialSet t;
  t.manifest_path = std::filesystem::absolute(manifest_path).lexically_normal();
  t.dataset_hash = manifest.content_hash;
  t.image_refs = refs;
  t.mode = mode;
  t.n_with_cracks = n_with_cracks;
  t.seed = seed;
  t.scoring = scoring;
  t.geometry = manifest.geometry;
  t.spec_echo = manifest.spec;
  for (auto ref : refs) {
    const auto& e = manifest.images[ref];
    TrialTruth truth;
    truth.has_flaw = e.has_flaw;
    if (e.has_flaw) {
      truth.size_mm = e.flaw_size_mm;
      truth.scan_center_mm = (static_cast<double>(*e.flaw_scan_center) + 0.5) * manifest.geometry.scan_pitch_mm;
    }
    t.truth.push_back(truth);
  }

  Sha256 h;
  h.update(t.dataset_hash + "|" + std::to_string(n_images) + "|" + std::to_string(n_with_cracks) + "|" +
           to_string(mode) + "|" + std::to_string(seed) + "|" + scoring_to_json(scoring).dump());
  t.trial_id = "trial-" + h.finish().substr(0, 12);
  return t;
}

std::string encode_pixels(const std::vector<float>& pixels) {
  std::vector<std::uint8_t> bytes(pixels.size() * 4);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(pixels[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return base64_encode(bytes);
}

std::vector<float> decode_pixels(const std::string& b64) {
  const auto bytes = base64_decode(b64);
  if (bytes.size() % 4 != 0) throw std::invalid_argument("pixel block is not a whole number of f32 values");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

nlohmann::json next_image_to_json(const NextImage& img) {
  return {{"image_index", img.image_index},
          {"n_total", img.n_total},
          {"n_remaining", img.n_remaining},
          {"n", img.n},
          {"encoding", "base64-f32le"},
          {"layout", "scan-major"},
          {"image", encode_pixels(img.pixels)},
          {"scan_start_mm", img.scan_start_mm},
          {"scan_end_mm", img.scan_end_mm},
          {"mode", to_string(img.mode)}};
}

NextImage next_image_from_json(const nlohmann::json& j) {
  NextImage img;
  img.image_index = j.at("image_index").get<std::size_t>();
  img.n_total = j.at("n_total").get<std::size_t>();
  img.n_remaining = j.at("n_remaining").get<std::size_t>();
  img.n = j.at("n").get<std::size_t>();
  img.pixels = decode_pixels(j.at("image").get<std::string>());
  if (img.pixels.size() != img.n * img.n) throw std::invalid_argument("image block does not hold n*n values");
  img.scan_start_mm = j.at("scan_start_mm").get<double>();
  img.scan_end_mm = j.at("scan_end_mm").get<double>();
  img.mode = trial_mode_from_string(j.at("mode").get<std::string>());
  return img;
}

nlohmann::json ack_to_json(const SubmitAck& ack) {
  nlohmann::json j = {{"accepted", true}, {"next_index", ack.next_index}, {"completed", ack.completed}};
  if (ack.feedback) j["feedback"] = truth_to_json(*ack.feedback);
  return j;
}

SubmitAck ack_from_json(const nlohmann::json& j) {
  SubmitAck ack;
  ack.next_index = j.at("next_index").get<std::size_t>();
  ack.completed = j.at("completed").get<bool>();
  if (j.contains("feedback")) ack.feedback = truth_from_json(j.at("feedback"));
  return ack;
}

CreateTrialRequest create_trial_request_from_json(const nlohmann::json& j) {
  CreateTrialRequest r;
  r.manifest_path = j.at("manifest").get<std::string>();
  r.n_images = j.value("n_images", r.n_images);
  r.n_with_cracks = j.value("n_with_cracks", r.n_with_cracks);
  r.mode = trial_mode_from_string(j.value("mode", std::string("normal")));
  r.seed = j.value("seed", r.seed);
  r.scoring = scoring_from_json(j.value("scoring", nlohmann::json::object()));
  return r;
}

nlohmann::json create_trial_request_to_json(const CreateTrialRequest& r) {
  return {{"manifest", r.manifest_path.string()},
          {"n_images", r.n_images},
          {"n_with_cracks", r.n_with_cracks},
          {"mode", to_string(r.mode)},
          {"seed", r.seed},
          {"scoring", scoring_to_json(r.scoring)}};
}

nlohmann::json build_session_report(const TrialSet& trial, const Session& session) {
  if (!session.completed) {
    throw InvalidStateError("session " + session.session_id + " has answered " +
                            std::to_string(session.responses.size()) + " of " + std::to_string(trial.size()) +
                            " images");
  }
  std::vector<ResponseEntry> responses;
  for (const auto& r : session.responses) responses.push_back({trial_image_id(r.image_index), r.marks_mm});
  const auto truth = trial.truth_entries();
  const auto score = score_trial(responses, truth, session.subject_id,
                                 {trial.scoring.scan_tolerance_mm, trial.scoring.presence_only});
  const auto records = augment_zero_misses(score.records, trial.scoring.zero_misses, session.subject_id);
  const auto fit = fit_hitmiss(records);

  nlohmann::json rows = nlohmann::json::array();
  std::size_t hits = 0, misses = 0;
  for (const auto& r : records) {
    rows.push_back({{"image_id", r.image_id},
                    {"size_mm", r.size_mm},
                    {"hit", r.hit},
                    {"false_call_context", r.false_call_context}});
    if (!r.false_call_context && r.size_mm > 0.0) ++(r.hit ? hits : misses);
  }
  auto report = fit_report_json(fit, records);
  report["session_id"] = session.session_id;
  report["trial_id"] = trial.trial_id;
  report["subject_id"] = session.subject_id;
  report["mode"] = to_string(trial.mode);
  report["n_images"] = trial.size();
  report["n_with_cracks"] = trial.n_with_cracks;
  report["scoring"] = scoring_to_json(trial.scoring);
  report["hit_miss"] = rows;
  report["flaw_hits"] = hits;
  report["flaw_misses"] = misses;
  report["false_call_count"] = score.false_call_count;
  if (fit.usable() && fit.beta1 > 0.0) {
    double max_size = 0.0;
    for (const auto& r : records) max_size = std::max(max_size, r.size_mm);
    const auto grid = size_grid(0.0, std::max(max_size, 1.0), 51);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : pod_curve(fit, grid)) curve.push_back({p.size_mm, p.pod, p.lower95});
    report["pod_curve"] = curve;
  } else {
    report["pod_curve"] = nlohmann::json::array();
  }
  return report;
}

struct TrialService::TrialSlot {
  TrialSet trial;
  std::mutex cache_mutex;
  std::optional<DatasetManifest> manifest;
  std::map<std::size_t, std::vector<LabeledImage>> batches;
};

struct TrialService::SessionSlot {
  Session session;
  mutable std::mutex mutex;
};

TrialService::TrialService(std::optional<std::filesystem::path> data_dir) : data_dir_(std::move(data_dir)) {
  if (data_dir_) {
    std::filesystem::create_directories(*data_dir_);
    replay();
  }
}

TrialService::~TrialService() = default;

void TrialService::append(const std::string& file, const nlohmann::json& line) const {
  if (!data_dir_) return;
  std::lock_guard lock(file_mutex_);
  std::ofstream out(*data_dir_ / file, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + (*data_dir_ / file).string());
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + (*data_dir_ / file).string());
}

void TrialService::replay() {
  auto lines = [](const std::filesystem::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        out.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(p.string() + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    return out;
  };
  for (const auto& j : lines(*data_dir_ / "trials.jsonl")) {
    auto slot = std::make_unique<TrialSlot>();
    slot->trial = trial_from_json(j);
    trials_[slot->trial.trial_id] = std::move(slot);
  }
  for (const auto& j : lines(*data_dir_ / "sessions.jsonl")) {
    const auto event = j.at("event").get<std::string>();
    const auto id = j.at("session_id").get<std::string>();
    if (event == "session_created") {
      auto slot = std::make_unique<SessionSlot>();
      slot->session.session_id = id;
      slot->session.trial_id = j.at("trial_id").get<std::string>();
      slot->session.subject_id = j.at("subject_id").get<std::string>();
      slot->session.created_at = j.value("created_at", "");
      if (!trials_.count(slot->session.trial_id)) {
        throw CorruptFileError("session " + id + " refers to unknown trial " + slot->session.trial_id);
      }
      sessions_[id] = std::move(slot);
      ++session_counter_;
    } else if (event == "response") {
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw CorruptFileError("response for unknown session " + id);
      auto& s = it->second->session;
      StoredResponse r{j.at("image_index").get<std::size_t>(), j.at("marks_mm").get<std::vector<double>>(),
                       j.at("gain_db").get<double>(), j.value("received_at", "")};
      if (r.image_index != s.cursor) throw CorruptFileError("out-of-order response in log for " + id);
      s.responses.push_back(std::move(r));
      ++s.cursor;
      s.completed = s.cursor == trials_.at(s.trial_id)->trial.size();
    } else {
      throw CorruptFileError("unknown session event " + event);
    }
  }
}

TrialSet TrialService::create_trial(const CreateTrialRequest& request) {
  const auto manifest = read_manifest(request.manifest_path);
  auto trial = utaug::create_trial(manifest, request.manifest_path, request.n_images, request.n_with_cracks,
                                   request.mode, request.seed, request.scoring);
  std::unique_lock lock(mutex_);
  if (auto it = trials_.find(trial.trial_id); it != trials_.end()) return it->second->trial;
  append("trials.jsonl", trial_to_json(trial));
  auto slot = std::make_unique<TrialSlot>();
  slot->trial = trial;
  slot->manifest = manifest;
  trials_[trial.trial_id] = std::move(slot);
  return trial;
}

TrialService::TrialSlot& TrialService::trial_slot(const std::string& trial_id) const {
  std::shared_lock lock(mutex_);
  auto it = trials_.find(trial_id);
  if (it == trials_.end()) throw NotFoundError("unknown trial " + trial_id);
  return *it->second;
}

TrialService::SessionSlot& TrialService::session_slot(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return *it->second;
}

TrialSet TrialService::get_trial(const std::string& trial_id) const { return trial_slot(trial_id).trial; }

Session TrialService::create_session(const std::string& trial_id, const std::string& subject_id) {
  check_subject_id(subject_id);
  std::unique_lock lock(mutex_);
  if (!trials_.count(trial_id)) throw NotFoundError("unknown trial " + trial_id);
  char buf[16];
  std::snprintf(buf, sizeof buf, "-s%04zu", session_counter_ + 1);
  auto slot = std::make_unique<SessionSlot>();
  slot->session.session_id = trial_id + buf;
  slot->session.trial_id = trial_id;
  slot->session.subject_id = subject_id;
  slot->session.created_at = utc_now();
  append("sessions.jsonl", {{"event", "session_created"},
                            {"session_id", slot->session.session_id},
                            {"trial_id", trial_id},
                            {"subject_id", subject_id},
                            {"created_at", slot->session.created_at}});
  ++session_counter_;
  Session out = slot->session;
  sessions_[out.session_id] = std::move(slot);
  return out;
}

Session TrialService::get_session(const std::string& session_id) const {
  auto& slot = session_slot(session_id);
  std::lock_guard lock(slot.mutex);
  return slot.session;
}

const LabeledImage& TrialService::load_image(TrialSlot& slot, std::size_t manifest_index) const {
  // Caller holds slot.cache_mutex.
  if (!slot.manifest) {
    slot.manifest = read_manifest(slot.trial.manifest_path);
    if (slot.manifest->content_hash != slot.trial.dataset_hash) {
      throw CorruptFileError("dataset at " + slot.trial.manifest_path.string() + " changed since trial creation");
    }
  }
  const auto& entry = slot.manifest->images.at(manifest_index);
  auto it = slot.batches.find(entry.file_index);
  if (it == slot.batches.end()) {
    const auto path = slot.manifest->file_path(entry.file_index);
    if (sha256_file(path) != slot.manifest->file_hashes.at(entry.file_index)) {
      throw CorruptFileError("minibatch " + path.string() + " does not match its manifest hash");
    }
    it = slot.batches.emplace(entry.file_index, read_minibatch(path)).first;
  }
  return it->second.at(entry.index_in_file);
}

NextImage TrialService::next_image(const std::string& session_id) {
  auto& sslot = session_slot(session_id);
  std::lock_guard lock(sslot.mutex);
  const auto& s = sslot.session;
  auto& tslot = trial_slot(s.trial_id);
  const auto& trial = tslot.trial;
  if (s.completed) throw EndOfTrial("session " + session_id + " has no more images");

  NextImage img;
  img.image_index = s.cursor;
  img.n_total = trial.size();
  img.n_remaining = trial.size() - s.cursor;
  img.scan_start_mm = trial.geometry.scan_start_mm();
  img.scan_end_mm = trial.geometry.scan_end_mm();
  img.mode = trial.mode;
  {
    std::lock_guard cache_lock(tslot.cache_mutex);
    const auto& li = load_image(tslot, trial.image_refs[s.cursor]);
    img.n = li.n;
    img.pixels = li.pixels;
  }
  return img;
}

SubmitAck TrialService::submit_response(const std::string& session_id, std::size_t image_index,
                                        const std::vector<double>& marks_mm, double gain_db) {
  auto& sslot = session_slot(session_id);
  std::lock_guard lock(sslot.mutex);
  auto& s = sslot.session;
  const auto& trial = trial_slot(s.trial_id).trial;
  if (s.completed) throw ConflictError("session " + session_id + " is already complete");
  if (image_index != s.cursor) {
    throw ConflictError("expected a response for image " + std::to_string(s.cursor) + ", got " +
                        std::to_string(image_index));
  }
  if (!std::isfinite(gain_db)) throw std::invalid_argument("gain_db must be finite");
  const double lo = trial.geometry.scan_start_mm(), hi = trial.geometry.scan_end_mm();
  for (double m : marks_mm) {
    if (!std::isfinite(m) || m < lo || m > hi) {
      throw std::invalid_argument("mark " + std::to_string(m) + " mm lies outside the scan range [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + "] mm");
    }
  }
  StoredResponse r{image_index, marks_mm, gain_db, utc_now()};
  append("sessions.jsonl", {{"event", "response"},
                            {"session_id", session_id},
                            {"image_index", r.image_index},
                            {"marks_mm", r.marks_mm},
                            {"gain_db", r.gain_db},
                            {"received_at", r.received_at}});
  s.responses.push_back(std::move(r));
  ++s.cursor;
  s.completed = s.cursor == trial.size();

  SubmitAck ack{s.cursor, s.completed, std::nullopt};
  if (trial.mode == TrialMode::learning) ack.feedback = trial.truth[image_index];
  return ack;
}

nlohmann::json TrialService::session_report(const std::string& session_id) const {
  Session copy = get_session(session_id);
  return build_session_report(trial_slot(copy.trial_id).trial, copy);
}

Session LocalTrialClient::create_session(const std::string& trial_id, const std::string& subject_id) {
  return service_.create_session(trial_id, subject_id);
}

std::optional<NextImage> LocalTrialClient::next_image(const std::string& session_id) {
  try {
    return service_.next_image(session_id);
  } catch (const EndOfTrial&) {
    return std::nullopt;
  }
}

SubmitAck LocalTrialClient::submit_response(const std::string& session_id, std::size_t image_index,
                                            const std::vector<double>& marks_mm, double gain_db) {
  return service_.submit_response(session_id, image_index, marks_mm, gain_db);
}

nlohmann::json LocalTrialClient::session_report(const std::string& session_id) {
  return service_.session_report(session_id);
}

}  // namespace utaug
