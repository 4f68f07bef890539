#pragma once

// Blind inspection trials: fixed image sets with hidden truth, sessions that
// record one response per image, and per-session POD reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "utaug/dataset.hpp"
#include "utaug/nn/network.hpp"
#include "utaug/pod.hpp"

namespace utaug {

enum class TrialMode { normal, learning };

std::string to_string(TrialMode mode);
TrialMode trial_mode_from_string(const std::string& s);

struct TrialScoring {
  double scan_tolerance_mm = 5.0;
  bool presence_only = false;
  std::size_t zero_misses = 30;
};

struct TrialTruth {
  bool has_flaw = false;
  double size_mm = 0.0;
  double scan_center_mm = 0.0;  // meaningful only when has_flaw
};

struct TrialSet {
  std::string trial_id;
  std::filesystem::path manifest_path;
  std::string dataset_hash;
  /// Manifest image index of every trial image, in presentation order.
  std::vector<std::size_t> image_refs;
  std::vector<TrialTruth> truth;
  TrialMode mode = TrialMode::normal;
  std::size_t n_with_cracks = 0;
  std::uint64_t seed = 0;
  TrialScoring scoring;
  ImageGeometry geometry;
  nlohmann::json spec_echo;

  std::size_t size() const { return image_refs.size(); }
  std::vector<TruthEntry> truth_entries() const;
};

nlohmann::json trial_to_json(const TrialSet& t);
TrialSet trial_from_json(const nlohmann::json& j);

/// Image id presented to subjects for trial position i.
std::string trial_image_id(std::size_t i);

/// Deterministic selection of n_with_cracks flawed and n_images - n_with_cracks
/// blank images from the manifest, shuffled under `seed`.
TrialSet create_trial(const DatasetManifest& manifest, const std::filesystem::path& manifest_path,
                      std::size_t n_images, std::size_t n_with_cracks, TrialMode mode, std::uint64_t seed,
                      const TrialScoring& scoring = {});

struct StoredResponse {
  std::size_t image_index = 0;
  std::vector<double> marks_mm;
  double gain_db = 0.0;
  std::string received_at;
};

struct Session {
  std::string session_id;
  std::string trial_id;
  std::string subject_id;
  std::size_t cursor = 0;
  std::vector<StoredResponse> responses;
  bool completed = false;
  std::string created_at;
};

struct NextImage {
  std::size_t image_index = 0;
  std::size_t n_total = 0;
  std::size_t n_remaining = 0;
  std::size_t n = 0;
  std::vector<float> pixels;  // n*n, [scan][time]
  double scan_start_mm = 0.0;
  double scan_end_mm = 0.0;
  TrialMode mode = TrialMode::normal;
};

struct SubmitAck {
  std::size_t next_index = 0;
  bool completed = false;
  /// Learning mode only: truth of the image just answered.
  std::optional<TrialTruth> feedback;
};

nlohmann::json next_image_to_json(const NextImage& img);
NextImage next_image_from_json(const nlohmann::json& j);
nlohmann::json ack_to_json(const SubmitAck& ack);
SubmitAck ack_from_json(const nlohmann::json& j);

/// Little-endian f32 block, base64.
std::string encode_pixels(const std::vector<float>& pixels);
std::vector<float> decode_pixels(const std::string& b64);

/// Report as a pure function of the trial and the stored responses.
nlohmann::json build_session_report(const TrialSet& trial, const Session& session);

struct CreateTrialRequest {
  std::filesystem::path manifest_path;
  std::size_t n_images = 200;
  std::size_t n_with_cracks = 86;
  TrialMode mode = TrialMode::normal;
  std::uint64_t seed = 0;
  TrialScoring scoring;
};

CreateTrialRequest create_trial_request_from_json(const nlohmann::json& j);
nlohmann::json create_trial_request_to_json(const CreateTrialRequest& r);

/// Thread-safe trial store. With a data directory, trials and sessions are
/// appended to trials.jsonl and sessions.jsonl and replayed on construction.
class TrialService {
 public:
  explicit TrialService(std::optional<std::filesystem::path> data_dir = std::nullopt);
  ~TrialService();
  TrialService(const TrialService&) = delete;
  TrialService& operator=(const TrialService&) = delete;

  /// Identical requests return the existing trial.
  TrialSet create_trial(const CreateTrialRequest& request);
  TrialSet get_trial(const std::string& trial_id) const;

  Session create_session(const std::string& trial_id, const std::string& subject_id);
  Session get_session(const std::string& session_id) const;

  NextImage next_image(const std::string& session_id);
  SubmitAck submit_response(const std::string& session_id, std::size_t image_index,
                            const std::vector<double>& marks_mm, double gain_db);
  nlohmann::json session_report(const std::string& session_id) const;

 private:
  struct SessionSlot;
  struct TrialSlot;

  TrialSlot& trial_slot(const std::string& trial_id) const;
  SessionSlot& session_slot(const std::string& session_id) const;
  const LabeledImage& load_image(TrialSlot& trial, std::size_t manifest_index) const;
  void append(const std::string& file, const nlohmann::json& line) const;
  void replay();

  std::optional<std::filesystem::path> data_dir_;
  mutable std::shared_mutex mutex_;
  mutable std::mutex file_mutex_;
  std::map<std::string, std::unique_ptr<TrialSlot>> trials_;
  std::map<std::string, std::unique_ptr<SessionSlot>> sessions_;
  std::size_t session_counter_ = 0;
};

/// The calls a subject makes against a trial. Implemented in-process and over HTTP.
class TrialClient {
 public:
  virtual ~TrialClient() = default;
  virtual Session create_session(const std::string& trial_id, const std::string& subject_id) = 0;
  /// nullopt once every image has been answered.
  virtual std::optional<NextImage> next_image(const std::string& session_id) = 0;
  virtual SubmitAck submit_response(const std::string& session_id, std::size_t image_index,
                                    const std::vector<double>& marks_mm, double gain_db) = 0;
  virtual nlohmann::json session_report(const std::string& session_id) = 0;
};

class LocalTrialClient : public TrialClient {
 public:
  explicit LocalTrialClient(TrialService& service) : service_(service) {}
  Session create_session(const std::string& trial_id, const std::string& subject_id) override;
  std::optional<NextImage> next_image(const std::string& session_id) override;
  SubmitAck submit_response(const std::string& session_id, std::size_t image_index,
                            const std::vector<double>& marks_mm, double gain_db) override;
  nlohmann::json session_report(const std::string& session_id) override;

 private:
  TrialService& service_;
};

class HttpTrialClient : public TrialClient {
 public:
  HttpTrialClient(std::string host, int port);
  ~HttpTrialClient() override;
  /// POST /trials.
  nlohmann::json create_trial(const CreateTrialRequest& request);
  Session create_session(const std::string& trial_id, const std::string& subject_id) override;
  std::optional<NextImage> next_image(const std::string& session_id) override;
  SubmitAck submit_response(const std::string& session_id, std::size_t image_index,
                            const std::vector<double>& marks_mm, double gain_db) override;
  nlohmann::json session_report(const std::string& session_id) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP front end for a TrialService.
class TrialHttpServer {
 public:
  explicit TrialHttpServer(TrialService& service);
  ~TrialHttpServer();
  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct MlSubjectOptions {
  std::string subject_id = "ml-classifier";
  double threshold = 0.5;
};

/// Answers every image of a trial through `client`: when the classifier is
/// positive, marks the scan position of the strongest envelope response;
/// otherwise submits no marks. Returns the completed session id.
std::string run_ml_subject(TrialClient& client, const std::string& trial_id, const nn::Network& net,
                           const MlSubjectOptions& options = {});

/// Scan position of the first-pool envelope cell that most exceeds its time
/// column's median over scan positions.
double envelope_peak_mm(const nn::Network& net, const NextImage& image);

}  // namespace utaug
