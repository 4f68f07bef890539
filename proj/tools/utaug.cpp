// utaug: command-line front end for the virtual-flaw augmentation pipeline.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "utaug/bscan.hpp"
#include "utaug/dataset.hpp"
#include "utaug/desk.hpp"
#include "utaug/digest.hpp"
#include "utaug/eflaw.hpp"
#include "utaug/errors.hpp"
#include "utaug/nn/network.hpp"
#include "utaug/nn/train.hpp"
#include "utaug/pod.hpp"
#include "utaug/trial.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace utaug;

namespace {

constexpr char kToolVersion[] = "0.1.0";

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kBadFile = 3,
  kIo = 4,
  kDiverged = 5,
  kNoEstimate = 6,
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::size_t> parse_sizes(const std::string& s, std::size_t expected, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(cell, &used);
    } catch (const std::exception&) {
    }
    if (used != cell.size() || v < 0) throw std::invalid_argument(std::string(what) + ": bad value '" + cell + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (expected && out.size() != expected) {
    throw std::invalid_argument(std::string(what) + " needs " + std::to_string(expected) + " comma-separated values");
  }
  return out;
}

/// Records the options of a subcommand, its outputs and their hashes.
/// The wall-clock time goes into a separate file so the record itself is reproducible.
class RunRecord {
 public:
  RunRecord(const CLI::App& sub) : name_(sub.get_name()) {
    for (const auto* opt : sub.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const auto key = opt->get_lnames().front();
      if (key == "help" || key == "config") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        config_[key] = res.size() == 1 ? json(res.front()) : json(res);
      } else {
        config_[key] = opt->get_default_str();
      }
    }
  }

  void output(const fs::path& path) { outputs_[path.lexically_normal().string()] = sha256_file(path); }
  void extra(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write(const fs::path& dir) const {
    json j = {{"command", name_}, {"tool_version", kToolVersion}, {"config", config_}, {"outputs", outputs_}};
    if (!extra_.empty()) j["results"] = extra_;
    write_json(dir / (name_ + ".run.json"), j);
    write_json(dir / (name_ + ".run.time.json"), {{"command", name_}, {"finished_at", utc_now()}});
  }

 private:
  std::string name_;
  json config_ = json::object();
  json outputs_ = json::object();
  json extra_ = json::object();
};

fs::path record_dir(const fs::path& out) {
  if (out.has_extension()) return out.has_parent_path() ? out.parent_path() : fs::path(".");
  return out;
}

TrialHttpServer* g_server_for_signal = nullptr;

void on_signal(int) {
  if (g_server_for_signal) g_server_for_signal->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual-flaw augmentation, CNN training and hit/miss POD for ultrasonic B-scans"};
  app.set_config("--config", "", "Key-value run configuration (TOML/INI); flags override file values");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // gen-canvas
  auto* gen = app.add_subcommand("gen-canvas", "Generate a flawless synthetic canvas (UTB1)");
  std::size_t gen_scan = 512, gen_time = 256;
  NoiseParams noise;
  noise.base_std = 400.0;
  noise.grain_corr_scan = 3;
  noise.grain_corr_time = 5;
  double gen_pitch = 0.21;
  std::vector<std::string> gen_echo;
  std::string gen_label = "canvas";
  fs::path gen_out = "canvas.utb";
  gen->add_option("--scan", gen_scan, "Scan positions")->capture_default_str();
  gen->add_option("--time", gen_time, "Time samples per A-scan")->capture_default_str();
  gen->add_option("--pitch-mm", gen_pitch, "Scan pitch in mm")->capture_default_str();
  gen->add_option("--mean", noise.base_mean, "Noise mean amplitude")->capture_default_str();
  gen->add_option("--std", noise.base_std, "Noise standard deviation")->capture_default_str();
  gen->add_option("--corr-scan", noise.grain_corr_scan, "Grain correlation length along scan")->capture_default_str();
  gen->add_option("--corr-time", noise.grain_corr_time, "Grain correlation length along time")->capture_default_str();
  gen->add_option("--echo", gen_echo, "Geometry echo band center,width,amplitude (repeatable)");
  gen->add_option("--label", gen_label)->capture_default_str();
  gen->add_option("--seed", noise.seed, "Noise seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output file")->capture_default_str();

  // make-signature
  auto* mk = app.add_subcommand("make-signature", "Implant a synthetic flaw kernel into a canvas for bootstrapping");
  fs::path mk_canvas, mk_out = "flawed.utb", mk_kernel_out;
  SyntheticFlawParams kp;
  std::size_t mk_scan = 0, mk_time = 0;
  std::uint64_t mk_seed = 0;
  mk->add_option("--canvas", mk_canvas, "Flawless canvas")->required();
  mk->add_option("--scan-len", kp.scan_len)->capture_default_str();
  mk->add_option("--time-len", kp.time_len)->capture_default_str();
  mk->add_option("--peak", kp.peak_amplitude, "Peak amplitude in counts")->capture_default_str();
  mk->add_option("--period", kp.carrier_period_samples, "Rectified carrier period in samples")->capture_default_str();
  mk->add_option("--scan-sigma", kp.scan_sigma)->capture_default_str();
  mk->add_option("--time-sigma", kp.time_sigma)->capture_default_str();
  mk->add_option("--arc-delay", kp.arc_delay)->capture_default_str();
  mk->add_option("--nominal-mm", kp.nominal_size_mm, "Nominal crack size")->capture_default_str();
  mk->add_option("--at-scan", mk_scan, "Top-left scan index")->capture_default_str();
  mk->add_option("--at-time", mk_time, "Top-left time index")->capture_default_str();
  mk->add_option("--kernel-out", mk_kernel_out, "Also write the kernel as a signature (UTS1)");
  mk->add_option("--seed", mk_seed, "Unused; accepted for uniformity")->capture_default_str();
  mk->add_option("--out", mk_out, "Flawed B-scan output")->capture_default_str();

  // extract
  auto* ex = app.add_subcommand("extract", "Extract a flaw signature as flawed minus blank over a region");
  fs::path ex_flawed, ex_blank, ex_out = "signature.uts";
  std::string ex_region, ex_label;
  double ex_nominal = 0.0;
  std::uint64_t ex_seed = 0;
  ex->add_option("--flawed", ex_flawed)->required();
  ex->add_option("--blank", ex_blank)->required();
  ex->add_option("--region", ex_region, "scan_start,scan_len,time_start,time_len")->required();
  ex->add_option("--nominal-mm", ex_nominal, "Nominal crack size")->required();
  ex->add_option("--label", ex_label);
  ex->add_option("--seed", ex_seed, "Unused; accepted for uniformity")->capture_default_str();
  ex->add_option("--out", ex_out)->capture_default_str();

  // implant
  auto* im = app.add_subcommand("implant", "Implant a signature into a canvas");
  fs::path im_canvas, im_sig, im_out = "implanted.utb";
  ImplantSpec im_spec;
  std::uint64_t im_seed = 0;
  im->add_option("--canvas", im_canvas)->required();
  im->add_option("--signature", im_sig)->required();
  im->add_option("--at-scan", im_spec.target_scan_index)->capture_default_str();
  im->add_option("--at-time", im_spec.target_time_index)->capture_default_str();
  im->add_option("--scale", im_spec.amplitude_scale)->capture_default_str();
  im->add_flag("--allow-amplification", im_spec.allow_amplification);
  im->add_option("--seed", im_seed, "Unused; accepted for uniformity")->capture_default_str();
  im->add_option("--out", im_out)->capture_default_str();

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "Build an augmented dataset of minibatch files");
  fs::path bd_canvas, bd_out = "dataset";
  std::vector<fs::path> bd_sigs;
  DatasetSpec ds;
  std::string bd_name = "data", bd_place_scan, bd_place_time, bd_window = "32,48", bd_crop, bd_kernel = "max";
  bd->add_option("--canvas", bd_canvas)->required();
  bd->add_option("--signature", bd_sigs, "Flaw signature (repeatable)");
  bd->add_option("--n-images", ds.n_images)->capture_default_str();
  bd->add_option("--crack-fraction", ds.crack_fraction)->capture_default_str();
  bd->add_option("--scale-min", ds.scale_min, "Exclusive lower amplitude scale")->capture_default_str();
  bd->add_option("--scale-max", ds.scale_max)->capture_default_str();
  bd->add_option("--placement-scan", bd_place_scan, "min,max top-left scan index (default: whole crop)");
  bd->add_option("--placement-time", bd_place_time, "min,max top-left time index (default: whole crop)");
  bd->add_option("--control-fraction", ds.control_copy_fraction)->capture_default_str();
  bd->add_option("--control-window", bd_window, "scan_len,time_len")->capture_default_str();
  bd->add_option("--resolution", ds.image_resolution)->capture_default_str();
  bd->add_option("--crop", bd_crop, "scan_start,scan_len,time_start,time_len (default: whole canvas)");
  bd->add_option("--kernel", bd_kernel, "Downsample kernel")->check(CLI::IsMember({"max", "mean"}))->capture_default_str();
  bd->add_option("--epsilon", ds.normalization_epsilon)->capture_default_str();
  bd->add_option("--minibatch", ds.minibatch_size)->capture_default_str();
  bd->add_option("--name", bd_name)->capture_default_str();
  bd->add_option("--seed", ds.seed)->capture_default_str();
  bd->add_option("--out", bd_out, "Output directory")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train the classifier");
  fs::path tr_train, tr_val, tr_out = "model", tr_net_json;
  nn::NetworkConfig net;
  std::string tr_pool = "2,4", tr_channels = "8,16,32", tr_dense = "64", tr_head = "flatten";
  std::size_t tr_restarts = 1;
  double tr_min_acc = 0.0;
  tr->add_option("--train", tr_train, "Training manifest")->required();
  tr->add_option("--val", tr_val, "Validation manifest")->required();
  tr->add_option("--network-json", tr_net_json, "Network config as JSON; flags below are then ignored");
  tr->add_option("--first-pool", tr_pool, "scan,time envelope window")->capture_default_str();
  tr->add_option("--channels", tr_channels, "Conv block widths")->capture_default_str();
  tr->add_option("--dense", tr_dense, "Hidden dense widths")->capture_default_str();
  tr->add_option("--head", tr_head)->check(CLI::IsMember({"flatten", "global_max"}))->capture_default_str();
  tr->add_option("--epochs", net.epochs)->capture_default_str();
  tr->add_option("--samples-per-epoch", net.samples_per_epoch)->capture_default_str();
  tr->add_option("--batch-size", net.batch_size)->capture_default_str();
  tr->add_option("--lr", net.rmsprop.learning_rate)->capture_default_str();
  tr->add_option("--rho", net.rmsprop.rho)->capture_default_str();
  tr->add_option("--rms-epsilon", net.rmsprop.epsilon)->capture_default_str();
  tr->add_option("--patience", net.early_stop_patience)->capture_default_str();
  tr->add_option("--threshold", net.threshold)->capture_default_str();
  tr->add_option("--restarts", tr_restarts, "Attempts with fresh seeds")->capture_default_str();
  tr->add_option("--min-accuracy", tr_min_acc, "Stop restarting once reached")->capture_default_str();
  tr->add_option("--seed", net.init_seed, "Initialisation seed")->capture_default_str();
  tr->add_option("--out", tr_out, "Output directory")->capture_default_str();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a model on a dataset");
  fs::path ev_model, ev_data, ev_out = "evaluation.json";
  double ev_threshold = 0.5;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--dataset", ev_data, "Dataset manifest")->required();
  ev->add_option("--threshold", ev_threshold)->capture_default_str();
  ev->add_option("--seed", ev_seed, "Unused; accepted for uniformity")->capture_default_str();
  ev->add_option("--out", ev_out)->capture_default_str();

  // pod-fit
  auto* pf = app.add_subcommand("pod-fit", "Hit/miss POD fit of a records CSV");
  fs::path pf_records, pf_out = "pod_fit.json", pf_curve;
  std::size_t pf_zero = 0;
  std::string pf_scale = "linear", pf_grid = "";
  std::uint64_t pf_seed = 0;
  pf->add_option("--records", pf_records, "CSV: image_id,subject_id,size_mm,hit,false_call_context")->required();
  pf->add_option("--zero-misses", pf_zero, "Zero-size misses to append")->capture_default_str();
  pf->add_option("--scale", pf_scale)->check(CLI::IsMember({"linear", "log"}))->capture_default_str();
  pf->add_option("--curve-out", pf_curve, "Write (size, pod, lower95) CSV");
  pf->add_option("--grid", pf_grid, "lo,hi,n for the curve (default 0..max size, 101 points)");
  pf->add_option("--seed", pf_seed, "Unused; accepted for uniformity")->capture_default_str();
  pf->add_option("--out", pf_out)->capture_default_str();

  // trial-create
  auto* tc = app.add_subcommand("trial-create", "Create a blind trial from a dataset");
  CreateTrialRequest tc_req;
  std::string tc_mode = "normal";
  fs::path tc_data = "trial-data", tc_out;
  tc->add_option("--manifest", tc_req.manifest_path)->required();
  tc->add_option("--n-images", tc_req.n_images)->capture_default_str();
  tc->add_option("--n-cracks", tc_req.n_with_cracks)->capture_default_str();
  tc->add_option("--mode", tc_mode)->check(CLI::IsMember({"normal", "learning"}))->capture_default_str();
  tc->add_option("--tolerance-mm", tc_req.scoring.scan_tolerance_mm)->capture_default_str();
  tc->add_flag("--presence-only", tc_req.scoring.presence_only);
  tc->add_option("--zero-misses", tc_req.scoring.zero_misses)->capture_default_str();
  tc->add_option("--data-dir", tc_data)->capture_default_str();
  tc->add_option("--seed", tc_req.seed)->capture_default_str();
  tc->add_option("--out", tc_out, "Trial summary JSON (default: <data-dir>/<trial_id>.json)");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the trial HTTP service");
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  fs::path sv_data = "trial-data";
  sv->add_option("--host", sv_host)->capture_default_str();
  sv->add_option("--port", sv_port)->capture_default_str();
  sv->add_option("--data-dir", sv_data)->capture_default_str();

  // ml-run
  auto* ml = app.add_subcommand("ml-run", "Answer a trial with a trained model and write its report");
  fs::path ml_data = "trial-data", ml_model, ml_out = "ml_report.json";
  std::string ml_trial, ml_server;
  MlSubjectOptions ml_opts;
  std::uint64_t ml_seed = 0;
  ml->add_option("--trial", ml_trial)->required();
  ml->add_option("--model", ml_model)->required();
  ml->add_option("--data-dir", ml_data, "Local trial store (ignored with --server)")->capture_default_str();
  ml->add_option("--server", ml_server, "host:port of a running service");
  ml->add_option("--threshold", ml_opts.threshold)->capture_default_str();
  ml->add_option("--subject", ml_opts.subject_id)->capture_default_str();
  ml->add_option("--seed", ml_seed, "Unused; accepted for uniformity")->capture_default_str();
  ml->add_option("--out", ml_out)->capture_default_str();

  // desk-run
  auto* dk = app.add_subcommand("desk-run", "Run the whole desk-scale experiment");
  std::uint64_t dk_seed = 20240607;
  fs::path dk_out = "desk", dk_json;
  dk->add_option("--desk-json", dk_json, "Full experiment config as JSON (overrides --seed)");
  dk->add_option("--seed", dk_seed)->capture_default_str();
  dk->add_option("--out", dk_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      for (const auto& e : gen_echo) {
        std::stringstream ss(e);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
          throw std::invalid_argument("--echo needs center,width,amplitude");
        }
        noise.geometry_echo_bands.push_back({std::stod(a), std::stod(b), std::stod(c)});
      }
      noise.validate();
      ScanMetadata meta;
      meta.scan_pitch_mm = gen_pitch;
      meta.label = gen_label;
      const auto canvas = generate_canvas(noise, gen_scan, gen_time, meta);
      write_bscan(canvas, gen_out);
      RunRecord rec(*gen);
      rec.output(gen_out);
      rec.write(record_dir(gen_out));
    } else if (*mk) {
      const auto canvas = read_bscan(mk_canvas);
      const auto kernel = synthesize_flaw_kernel(kp, "synthetic-kernel");
      const auto result = implant(canvas, kernel, {mk_scan, mk_time, 1.0, false});
      write_bscan(result.scan, mk_out);
      RunRecord rec(*mk);
      rec.output(mk_out);
      if (!mk_kernel_out.empty()) {
        write_signature(kernel, mk_kernel_out);
        rec.output(mk_kernel_out);
      }
      rec.extra("clipped", result.clipped);
      rec.extra("region", {mk_scan, kp.scan_len, mk_time, kp.time_len});
      rec.write(record_dir(mk_out));
    } else if (*ex) {
      const auto r = parse_sizes(ex_region, 4, "--region");
      const auto sig =
          extract_flaw(read_bscan(ex_flawed), read_bscan(ex_blank), Region{r[0], r[1], r[2], r[3]}, ex_nominal, ex_label);
      write_signature(sig, ex_out);
      RunRecord rec(*ex);
      rec.output(ex_out);
      rec.write(record_dir(ex_out));
    } else if (*im) {
      const auto result = implant(read_bscan(im_canvas), read_signature(im_sig), im_spec);
      write_bscan(result.scan, im_out);
      RunRecord rec(*im);
      rec.output(im_out);
      rec.extra("effective_size_mm", result.effective_size_mm);
      rec.extra("clipped", result.clipped);
      rec.write(record_dir(im_out));
    } else if (*bd) {
      if (ds.n_images < 1) throw std::invalid_argument("n_images must be >= 1");
      const auto canvas = read_bscan(bd_canvas);
      std::vector<FlawSignature> sigs;
      std::size_t max_scan = 0, max_time = 0;
      for (const auto& p : bd_sigs) {
        sigs.push_back(read_signature(p));
        max_scan = std::max(max_scan, sigs.back().scan_len());
        max_time = std::max(max_time, sigs.back().time_len());
      }
      ds.downsample_kernel = bd_kernel == "max" ? DownsampleKernel::max : DownsampleKernel::mean;
      const auto w = parse_sizes(bd_window, 2, "--control-window");
      ds.control_copy_scan_len = w[0];
      ds.control_copy_time_len = w[1];
      if (bd_crop.empty()) {
        ds.crop_region = Region::full(canvas);
      } else {
        const auto c = parse_sizes(bd_crop, 4, "--crop");
        ds.crop_region = {c[0], c[1], c[2], c[3]};
      }
      const std::size_t extent_scan = std::max(max_scan, ds.control_copy_fraction > 0 ? w[0] : 0);
      const std::size_t extent_time = std::max(max_time, ds.control_copy_fraction > 0 ? w[1] : 0);
      auto default_range = [](std::size_t start, std::size_t len, std::size_t extent) {
        if (extent > len) throw std::invalid_argument("signature or control window longer than the crop region");
        return std::vector<std::size_t>{start, start + len - extent};
      };
      const auto ps = bd_place_scan.empty()
                          ? default_range(ds.crop_region.scan_start, ds.crop_region.scan_len, extent_scan)
                          : parse_sizes(bd_place_scan, 2, "--placement-scan");
      const auto pt = bd_place_time.empty()
                          ? default_range(ds.crop_region.time_start, ds.crop_region.time_len, extent_time)
                          : parse_sizes(bd_place_time, 2, "--placement-time");
      ds.placement_scan_min = ps[0];
      ds.placement_scan_max = ps[1];
      ds.placement_time_min = pt[0];
      ds.placement_time_max = pt[1];
      ds.validate();
      const auto m = build_dataset(canvas, sigs, ds, bd_out, bd_name);
      RunRecord rec(*bd);
      rec.output(bd_out / (bd_name + ".manifest.json"));
      rec.extra("content_hash", m.content_hash);
      rec.extra("n_images", m.images.size());
      rec.extra("spec", ds);
      rec.write(bd_out);
    } else if (*tr) {
      if (!tr_net_json.empty()) {
        std::ifstream in(tr_net_json);
        if (!in) throw std::runtime_error("cannot open " + tr_net_json.string());
        net = json::parse(in).get<nn::NetworkConfig>();
      } else {
        const auto p = parse_sizes(tr_pool, 2, "--first-pool");
        net.first_pool = {p[0], p[1]};
        net.conv_blocks.clear();
        for (auto c : parse_sizes(tr_channels, 0, "--channels")) net.conv_blocks.push_back({c, 1});
        net.dense = parse_sizes(tr_dense, 0, "--dense");
        net.head = tr_head == "flatten" ? nn::Head::flatten : nn::Head::global_max;
      }
      const auto train_m = read_manifest(tr_train);
      const auto val_m = read_manifest(tr_val);
      net.input_n = train_m.spec.image_resolution;
      net.validate();
      nn::TrainResult result;
      if (tr_restarts > 1) {
        const auto train_images = load_images(train_m);
        const auto val_images = load_images(val_m);
        nn::check_disjoint(train_m, val_m);
        result = nn::train_with_restarts(train_images, val_images, net, tr_min_acc, tr_restarts);
      } else {
        result = nn::train(train_m, val_m, net);
      }
      fs::create_directories(tr_out);
      nn::save_model(result.network, tr_out / "model.utn");
      write_json(tr_out / "history.json", nn::history_to_json(result));
      RunRecord rec(*tr);
      rec.output(tr_out / "model.utn");
      rec.output(tr_out / "history.json");
      rec.extra("train_hash", train_m.content_hash);
      rec.extra("val_hash", val_m.content_hash);
      rec.extra("epochs_run", result.history.size());
      rec.extra("selected_epoch", result.selected_epoch);
      rec.extra("selected_val_accuracy", result.selected_val_accuracy);
      rec.write(tr_out);
      std::cout << "epochs " << result.history.size() << ", selected epoch " << result.selected_epoch
                << ", validation accuracy " << result.selected_val_accuracy
                << "\n";
    } else if (*ev) {
      const auto model = nn::load_model(ev_model);
      const auto m = read_manifest(ev_data);
      const auto images = load_images(m);
      const auto e = nn::evaluate(model, images, ev_threshold);
      json j = {{"dataset_hash", m.content_hash},
                {"threshold", ev_threshold},
                {"loss", e.loss},
                {"accuracy", e.accuracy},
                {"true_positives", e.true_positives},
                {"false_positives", e.false_positives},
                {"true_negatives", e.true_negatives},
                {"false_negatives", e.false_negatives}};
      write_json(ev_out, j);
      RunRecord rec(*ev);
      rec.output(ev_out);
      rec.write(record_dir(ev_out));
      std::cout << "accuracy " << e.accuracy << "\n";
    } else if (*pf) {
      auto records = read_records_csv(pf_records);
      if (pf_zero > 0) records = augment_zero_misses(std::move(records), pf_zero, "augmentation");
      FitOptions opts;
      opts.scale = pf_scale == "linear" ? SizeScale::linear : SizeScale::log;
      const auto fit = fit_hitmiss(records, opts);
      auto report = fit_report_json(fit, records);
      report["zero_misses_added"] = pf_zero;
      write_json(pf_out, report);
      RunRecord rec(*pf);
      rec.output(pf_out);
      if (!pf_curve.empty()) {
        std::vector<double> grid;
        if (pf_grid.empty()) {
          double hi = 0.0;
          for (const auto& r : records) hi = std::max(hi, r.size_mm);
          const double lo = opts.scale == SizeScale::log ? hi / 100.0 : 0.0;
          grid = size_grid(lo, std::max(hi, 1e-3), 101);
        } else {
          std::stringstream ss(pf_grid);
          std::string a, b, c;
          std::getline(ss, a, ',');
          std::getline(ss, b, ',');
          std::getline(ss, c);
          grid = size_grid(std::stod(a), std::stod(b), std::stoul(c));
        }
        const auto curve = pod_curve(fit, grid);
        write_text(pf_curve, curve_to_csv(curve));
        rec.output(pf_curve);
      }
      rec.write(record_dir(pf_out));
      std::cout << report.dump(2) << "\n";
      if (!fit.usable()) return kNoEstimate;
    } else if (*tc) {
      tc_req.mode = trial_mode_from_string(tc_mode);
      TrialService service(tc_data);
      const auto t = service.create_trial(tc_req);
      if (tc_out.empty()) tc_out = tc_data / (t.trial_id + ".json");
      write_json(tc_out, {{"trial_id", t.trial_id},
                          {"n_images", t.size()},
                          {"n_with_cracks", t.n_with_cracks},
                          {"mode", to_string(t.mode)},
                          {"dataset_hash", t.dataset_hash}});
      RunRecord rec(*tc);
      rec.output(tc_out);
      rec.extra("trial_id", t.trial_id);
      rec.write(record_dir(tc_out));
      std::cout << t.trial_id << "\n";
    } else if (*sv) {
      TrialService service(sv_data);
      TrialHttpServer server(service);
      const int port = server.bind(sv_host, sv_port);
      g_server_for_signal = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << sv_host << ":" << port << std::endl;
      server.listen();
    } else if (*ml) {
      const auto model = nn::load_model(ml_model);
      json report;
      if (!ml_server.empty()) {
        const auto colon = ml_server.rfind(':');
        if (colon == std::string::npos) throw std::invalid_argument("--server must be host:port");
        HttpTrialClient client(ml_server.substr(0, colon), std::stoi(ml_server.substr(colon + 1)));
        const auto sid = run_ml_subject(client, ml_trial, model, ml_opts);
        report = client.session_report(sid);
      } else {
        TrialService service(ml_data);
        LocalTrialClient client(service);
        const auto sid = run_ml_subject(client, ml_trial, model, ml_opts);
        report = client.session_report(sid);
      }
      write_json(ml_out, report);
      RunRecord rec(*ml);
      rec.output(ml_out);
      rec.write(record_dir(ml_out));
      std::cout << "false calls " << report.at("false_call_count") << ", a90/95 " << report.at("a90_95").dump()
                << "\n";
    } else if (*dk) {
      DeskConfig config = default_desk_config(dk_seed);
      if (!dk_json.empty()) {
        std::ifstream in(dk_json);
        if (!in) throw std::runtime_error("cannot open " + dk_json.string());
        config = desk_config_from_json(json::parse(in));
      }
      const auto r = run_desk_experiment(config, dk_out, &std::cout);
      RunRecord rec(*dk);
      rec.output(dk_out / "model.utn");
      rec.output(dk_out / "report.json");
      rec.output(dk_out / "summary.json");
      rec.write(dk_out);
      std::cout << desk_summary_json(r).dump(2) << "\n";
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error (invalid argument): " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error (file format): " << e.what() << "\n";
    return kBadFile;
  } catch (const CorruptFileError& e) {
    std::cerr << "error (corrupt file): " << e.what() << "\n";
    return kBadFile;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error (training diverged at epoch " << e.epoch() << "): " << e.what() << "\n";
    return kDiverged;
  } catch (const NoSolutionError& e) {
    std::cerr << "error (no solution): " << e.what() << "\n";
    return kNoEstimate;
  } catch (const InvalidStateError& e) {
    std::cerr << "error (invalid state): " << e.what() << "\n";
    return kNoEstimate;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (I/O): " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
