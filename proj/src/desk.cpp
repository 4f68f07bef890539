#include "utaug/desk.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "utaug/digest.hpp"
#include "utaug/parallel.hpp"
#include "utaug/pod.hpp"
#include "utaug/random.hpp"

namespace utaug {

namespace {

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetSpec desk_dataset(std::size_t n_images, std::uint64_t seed) {
  DatasetSpec s;
  s.n_images = n_images;
  s.crack_fraction = 0.5;
  s.scale_min = 0.35;
  s.scale_max = 1.0;
  s.placement_scan_min = 0;
  s.placement_scan_max = 512 - 41;
  s.placement_time_min = 8;
  s.placement_time_max = 150;
  s.control_copy_fraction = 0.25;
  s.image_resolution = 128;
  s.crop_region = {0, 512, 0, 256};
  s.minibatch_size = 100;
  s.seed = seed;
  return s;
}

}  // namespace

nlohmann::json desk_config_to_json(const DeskConfig& c) {
  return {{"noise", c.noise},
          {"canvas_scan", c.canvas_scan},
          {"canvas_time", c.canvas_time},
          {"scan_pitch_mm", c.scan_pitch_mm},
          {"signatures", c.signatures},
          {"bootstrap_scan", c.bootstrap_scan},
          {"bootstrap_time", c.bootstrap_time},
          {"train_spec", c.train_spec},
          {"val_spec", c.val_spec},
          {"trial_pool_spec", c.trial_pool_spec},
          {"network", c.network},
          {"trial_images", c.trial_images},
          {"trial_cracks", c.trial_cracks},
          {"trial_seed", c.trial_seed},
          {"scoring",
           {{"scan_tolerance_mm", c.scoring.scan_tolerance_mm},
            {"presence_only", c.scoring.presence_only},
            {"zero_misses", c.scoring.zero_misses}}},
          {"sweep_step", c.sweep_step}};
}

DeskConfig desk_config_from_json(const nlohmann::json& j) {
  DeskConfig c;
  c.noise = j.at("noise").get<NoiseParams>();
  c.canvas_scan = j.at("canvas_scan").get<std::size_t>();
  c.canvas_time = j.at("canvas_time").get<std::size_t>();
  c.scan_pitch_mm = j.at("scan_pitch_mm").get<double>();
  c.signatures = j.at("signatures").get<std::vector<SyntheticFlawParams>>();
  c.bootstrap_scan = j.at("bootstrap_scan").get<std::size_t>();
  c.bootstrap_time = j.at("bootstrap_time").get<std::size_t>();
  c.train_spec = j.at("train_spec").get<DatasetSpec>();
  c.val_spec = j.at("val_spec").get<DatasetSpec>();
  c.trial_pool_spec = j.at("trial_pool_spec").get<DatasetSpec>();
  c.network = j.at("network").get<nn::NetworkConfig>();
  c.trial_images = j.at("trial_images").get<std::size_t>();
  c.trial_cracks = j.at("trial_cracks").get<std::size_t>();
  c.trial_seed = j.at("trial_seed").get<std::uint64_t>();
  const auto& s = j.at("scoring");
  c.scoring = {s.at("scan_tolerance_mm").get<double>(), s.at("presence_only").get<bool>(),
               s.at("zero_misses").get<std::size_t>()};
  c.sweep_step = j.at("sweep_step").get<double>();
  return c;
}

DeskConfig default_desk_config(std::uint64_t seed) {
  auto derive = [seed](std::uint64_t k) { return splitmix64(seed + k); };
  DeskConfig c;
  c.noise.base_mean = 2000.0;
  c.noise.base_std = 400.0;
  c.noise.grain_corr_scan = 3;
  c.noise.grain_corr_time = 5;
  c.noise.geometry_echo_bands = {{230.0, 3.0, 4000.0}};
  c.noise.seed = derive(1);

  SyntheticFlawParams small, mid, large;
  small.nominal_size_mm = 1.6;
  small.peak_amplitude = 6000.0;
  small.scan_sigma = 4.0;
  small.time_sigma = 5.0;
  small.arc_delay = 2.0;
  mid.nominal_size_mm = 4.0;
  mid.peak_amplitude = 7000.0;
  mid.scan_sigma = 6.0;
  mid.time_sigma = 6.0;
  mid.arc_delay = 3.0;
  large.nominal_size_mm = 8.6;
  large.peak_amplitude = 9500.0;
  large.scan_sigma = 9.0;
  large.time_sigma = 7.0;
  large.arc_delay = 5.0;
  c.signatures = {small, mid, large};

  c.train_spec = desk_dataset(2000, derive(2));
  c.val_spec = desk_dataset(500, derive(3));
  c.trial_pool_spec = desk_dataset(400, derive(4));

  c.network.epochs = 30;
  c.network.samples_per_epoch = 2000;
  c.network.batch_size = 32;
  c.network.early_stop_patience = 3;
  c.network.rmsprop.learning_rate = 5e-4;
  c.network.init_seed = derive(5);
  c.trial_seed = derive(6);
  return c;
}

std::vector<SweepPoint> threshold_sweep(std::span<const double> probabilities, std::span<const TrialTruth> truth,
                                        double step, std::size_t zero_misses) {
  if (probabilities.size() != truth.size()) throw std::invalid_argument("probability and truth counts differ");
  if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("sweep step must be in (0, 1)");
  double max_blank = -1.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i].has_flaw) max_blank = std::max(max_blank, probabilities[i]);
  }
  std::vector<double> thresholds;
  thresholds.push_back(max_blank < 0.0 ? 0.0 : std::nextafter(max_blank, 2.0));
  for (double t = step; t < 1.0 - 1e-12; t += step) thresholds.push_back(t);

  std::vector<SweepPoint> out;
  for (double t : thresholds) {
    SweepPoint p;
    p.threshold = t;
    std::vector<HitMissRecord> records;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool positive = probabilities[i] >= t;
      if (truth[i].has_flaw) {
        ++(positive ? p.hits : p.misses);
        records.push_back({truth[i].size_mm, positive, "sweep", trial_image_id(i), false});
      } else if (positive) {
        ++p.false_calls;
      }
    }
    records = augment_zero_misses(std::move(records), zero_misses, "sweep");
    try {
      const auto fit = fit_hitmiss(records);
      const auto rep = report_a9095(fit, records);
      p.a90_95_mm = rep.size_mm;
      p.method = rep.method;
    } catch (const std::exception&) {
      p.a90_95_mm = std::numeric_limits<double>::quiet_NaN();
      p.method = "not estimable";
    }
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::json sweep_to_json(std::span<const SweepPoint> sweep) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : sweep) {
    out.push_back({{"threshold", p.threshold},
                   {"hits", p.hits},
                   {"misses", p.misses},
                   {"false_calls", p.false_calls},
                   {"a90_95_mm", std::isfinite(p.a90_95_mm) ? nlohmann::json(p.a90_95_mm) : nlohmann::json()},
                   {"method", p.method}});
  }
  return out;
}

DeskResult run_desk_experiment(const DeskConfig& config, const std::filesystem::path& out_dir, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  auto say = [&](const std::string& msg) {
    if (log) *log << msg << std::endl;
  };
  DeskResult r;
  r.out_dir = out_dir;
  std::filesystem::create_directories(out_dir);
  write_json(desk_config_to_json(config), out_dir / "desk_config.json");

  ScanMetadata meta;
  meta.scan_pitch_mm = config.scan_pitch_mm;
  meta.label = "desk-canvas";
  const auto canvas = generate_canvas(config.noise, config.canvas_scan, config.canvas_time, meta);
  write_bscan(canvas, out_dir / "canvas.utb");
  r.canvas_hash = sha256_file(out_dir / "canvas.utb");
  say("canvas " + std::to_string(config.canvas_scan) + "x" + std::to_string(config.canvas_time));

  std::vector<FlawSignature> signatures;
  for (std::size_t k = 0; k < config.signatures.size(); ++k) {
    const auto& p = config.signatures[k];
    const auto kernel = synthesize_flaw_kernel(p, "kernel-" + std::to_string(k));
    ImplantSpec spec{config.bootstrap_scan, config.bootstrap_time, 1.0, false};
    const auto flawed = implant(canvas, kernel, spec).scan;
    auto sig = extract_flaw(flawed, canvas, kernel.placed_at(config.bootstrap_scan, config.bootstrap_time),
                            p.nominal_size_mm, "signature-" + std::to_string(k));
    const auto path = out_dir / ("signature_" + std::to_string(k) + ".uts");
    write_signature(sig, path);
    r.signature_hashes.push_back(sha256_file(path));
    signatures.push_back(std::move(sig));
  }

  const auto train_set = build_dataset(canvas, signatures, config.train_spec, out_dir / "train", "train");
  const auto val_set = build_dataset(canvas, signatures, config.val_spec, out_dir / "val", "val");
  const auto pool = build_dataset(canvas, signatures, config.trial_pool_spec, out_dir / "trial_pool", "pool");
  r.train_hash = train_set.content_hash;
  r.val_hash = val_set.content_hash;
  r.trial_pool_hash = pool.content_hash;
  say("datasets built: train " + std::to_string(train_set.images.size()) + ", val " +
      std::to_string(val_set.images.size()) + ", trial pool " + std::to_string(pool.images.size()));

  r.training = nn::train(train_set, val_set, config.network);
  for (const auto& h : r.training.history) {
    say("epoch " + std::to_string(h.epoch) + " train_loss " + std::to_string(h.train_loss) + " val_loss " +
        std::to_string(h.val_loss) + " val_acc " + std::to_string(h.val_accuracy));
  }
  nn::save_model(r.training.network, out_dir / "model.utn");
  r.model_hash = sha256_file(out_dir / "model.utn");
  write_json(nn::history_to_json(r.training), out_dir / "history.json");

  std::filesystem::remove_all(out_dir / "trial-data");
  TrialService service(out_dir / "trial-data");
  CreateTrialRequest req;
  req.manifest_path = out_dir / "trial_pool" / "pool.manifest.json";
  req.n_images = config.trial_images;
  req.n_with_cracks = config.trial_cracks;
  req.seed = config.trial_seed;
  req.scoring = config.scoring;
  const auto trial = service.create_trial(req);
  r.trial_id = trial.trial_id;
  LocalTrialClient client(service);
  r.session_id = run_ml_subject(client, trial.trial_id, r.training.network,
                                {"ml-classifier", config.network.threshold});
  r.report = service.session_report(r.session_id);
  const auto report_text = r.report.dump(2);
  write_json(r.report, out_dir / "report.json");
  r.report_hash = sha256_hex({reinterpret_cast<const std::uint8_t*>(report_text.data()), report_text.size()});
  say("trial " + trial.trial_id + " answered by " + r.session_id);

  const auto pool_images = load_images(pool);
  std::vector<double> probs(trial.size());
  parallel_for(trial.size(), [&](std::size_t i) {
    probs[i] = nn::predict(r.training.network, pool_images[trial.image_refs[i]].pixels);
  });
  r.sweep = threshold_sweep(probs, trial.truth, config.sweep_step, config.scoring.zero_misses);
  write_json(sweep_to_json(r.sweep), out_dir / "threshold_sweep.json");

  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(desk_summary_json(r), out_dir / "summary.json");
  return r;
}

nlohmann::json desk_summary_json(const DeskResult& r) {
  const auto& h = r.training.history;
  return {{"canvas_hash", r.canvas_hash},
          {"signature_hashes", r.signature_hashes},
          {"train_hash", r.train_hash},
          {"val_hash", r.val_hash},
          {"trial_pool_hash", r.trial_pool_hash},
          {"model_hash", r.model_hash},
          {"epochs_run", h.size()},
          {"initial_val_loss", r.training.initial_val_loss},
          {"final_val_loss", h.empty() ? r.training.initial_val_loss : h.back().val_loss},
          {"final_val_accuracy", h.empty() ? r.training.initial_val_accuracy : h.back().val_accuracy},
          {"selected_epoch", r.training.selected_epoch},
          {"selected_val_accuracy", r.training.selected_val_accuracy},
          {"selected_val_loss", r.training.selected_val_loss},
          {"trial_id", r.trial_id},
          {"session_id", r.session_id},
          {"report_hash", r.report_hash},
          {"false_call_count", r.report.at("false_call_count")},
          {"a90_95", r.report.at("a90_95")},
          {"zero_false_call_threshold", r.sweep.empty() ? nlohmann::json() : nlohmann::json(r.sweep.front().threshold)}};
}

}  // namespace utaug
