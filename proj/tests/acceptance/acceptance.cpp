// One PASS/FAIL line per acceptance criterion. Exit status is non-zero if any fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "envelope_oracle.hpp"
#include "gradcheck.hpp"
#include "pod_oracle.hpp"
#include "utaug/bscan.hpp"
#include "utaug/desk.hpp"
#include "utaug/eflaw.hpp"
#include "utaug/errors.hpp"
#include "utaug/pod.hpp"
#include "utaug/random.hpp"

namespace fs = std::filesystem;
using namespace utaug;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

BScan random_canvas(Rng& rng) {
  NoiseParams p;
  p.base_mean = rng.uniform(3000.0, 20000.0);
  p.base_std = rng.uniform(50.0, 600.0);
  p.grain_corr_scan = 1 + rng.index(4);
  p.grain_corr_time = 1 + rng.index(4);
  p.seed = rng.next_u64();
  return generate_canvas(p, 24 + rng.index(40), 24 + rng.index(40));
}

Outcome round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  std::size_t ok = 0, cases = 0, clipped = 0;
  BScan canvas = random_canvas(rng);
  while (cases < 10000) {
    const std::size_t ns = 1 + rng.index(canvas.n_scan()), nt = 1 + rng.index(canvas.n_time());
    std::vector<std::int32_t> d(ns * nt);
    for (auto& x : d) x = static_cast<std::int32_t>(rng.index(1601)) - 800;
    const FlawSignature truth(ns, nt, std::move(d), 1.0 + rng.uniform(0.0, 8.0), "rt");
    const std::size_t ps = rng.index(canvas.n_scan() - ns + 1), pt = rng.index(canvas.n_time() - nt + 1);
    const auto flawed = implant(canvas, truth, {ps, pt, 1.0, false});
    if (flawed.clipped) {
      ++clipped;
      continue;
    }
    ++cases;
    const Region where = truth.placed_at(ps, pt);
    const auto sig = extract_flaw(flawed.scan, canvas, where, truth.nominal_size_mm(), "rt");
    const auto erased = erase_flaw(flawed.scan, canvas, where);
    const auto again = implant(erased, sig, {ps, pt, 1.0, false});
    ok += !again.clipped && again.scan == flawed.scan && erased == canvas && sig == truth;
    if (cases % 100 == 0) canvas = random_canvas(rng);
  }
  const double secs = seconds_since(t0);
  return {ok == cases && secs < 60.0, std::to_string(ok) + "/" + std::to_string(cases) + " bit-exact (" +
                                          std::to_string(clipped) + " clipped draws skipped), " + fmt("%.1f s", secs)};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_layer;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& c : gradcheck::check_all_layers(1000 + seed)) {
      if (!(c.error <= worst)) {
        worst = c.error;
        worst_layer = c.layer;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          "max relative error " + fmt("%.2e", worst) + " (" + worst_layer + "), " + fmt("%.1f s", secs)};
}

Outcome envelope() {
  double worst = envelope_oracle::correlation({});
  Rng rng(3003);
  for (int i = 0; i < 100; ++i) worst = std::min(worst, envelope_oracle::correlation(envelope_oracle::random_burst(rng)));
  return {worst >= 0.98, "min Pearson r over 101 bursts " + fmt("%.4f", worst)};
}

Outcome pod_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  int good = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const auto f = fit_hitmiss(pod_oracle::records(4000 + rep));
    if (!f.usable()) continue;
    const bool b0 = std::abs(f.beta0 - pod_oracle::kBeta0) <= 3.0 * std::sqrt(f.covariance[0][0]);
    const bool b1 = std::abs(f.beta1 - pod_oracle::kBeta1) <= 3.0 * std::sqrt(f.covariance[1][1]);
    const bool a90 = std::abs(f.a90_mm - 3.10) <= 0.10 * 3.10;
    good += b0 && b1 && a90;
  }
  const double secs = seconds_since(t0);
  return {good >= 95 && secs < 60.0, std::to_string(good) + "/100 repetitions, " + fmt("%.1f s", secs)};
}

Outcome separation() {
  std::vector<HitMissRecord> hits;
  Rng rng(5005);
  for (int i = 0; i < 40; ++i) hits.push_back({0.9 + rng.uniform(0.0, 7.7), true, "ml", "h" + std::to_string(i), false});
  hits.push_back({0.9, true, "ml", "smallest", false});
  const auto raw = fit_hitmiss(hits);
  const auto augmented = augment_zero_misses(hits, 30);
  const auto aug = fit_hitmiss(augmented);
  const auto rep = report_a9095(aug, augmented);

  const bool flagged = raw.separation_detected;
  const bool aug_finite = aug.converged && std::isfinite(aug.a90_95_mm);
  const bool rule = rep.method == kSmallestFoundTag && rep.size_mm == 0.9;
  std::string detail = std::string("all-hit separation flag ") + (flagged ? "ok" : "missing") +
                       "; augmented fit " + (aug_finite ? "finite" : "has no finite a90/95 (" + aug.message + ")") +
                       "; smallest-found rule " + (rule ? "ok" : "wrong");
  return {flagged && aug_finite && rule, detail};
}

struct DeskRun {
  DeskResult result;
  std::string model_bytes;
};

DeskRun run_desk(const fs::path& dir) {
  fs::remove_all(dir);
  DeskRun r;
  r.result = run_desk_experiment(default_desk_config(), dir);
  std::ifstream in(dir / "model.utn", std::ios::binary);
  r.model_bytes.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

Outcome desk(const DeskRun& run) {
  const auto& r = run.result;
  const auto cfg = default_desk_config();
  const auto& tr = r.training;
  const std::size_t n_trial = r.report.at("n_images").get<std::size_t>();
  const std::size_t n_cracks = r.report.at("n_with_cracks").get<std::size_t>();
  const bool shape = cfg.signatures.size() == 3 && cfg.train_spec.n_images == 2000 && cfg.val_spec.n_images == 500 &&
                     cfg.train_spec.image_resolution == 128 && cfg.network.epochs <= 30;
  const bool accuracy = tr.selected_val_accuracy >= 0.95 && tr.history.size() <= 30;
  const bool learned = tr.selected_val_loss < tr.initial_val_loss;
  const bool trial = n_trial == 200 && n_cracks == 86;
  const bool sweep = !r.sweep.empty() && r.sweep.front().false_calls == 0;
  const bool time = r.seconds < 1800.0;
  std::ostringstream d;
  d << "val accuracy " << fmt("%.3f", tr.selected_val_accuracy) << " at epoch " << tr.selected_epoch << "/"
    << tr.history.size() << ", val loss " << fmt("%.4f", tr.initial_val_loss) << " -> "
    << fmt("%.4f", tr.selected_val_loss) << ", trial " << n_trial << "/" << n_cracks << ", false calls "
    << r.report.at("false_call_count") << ", zero-false-call threshold "
    << (r.sweep.empty() ? std::string("none") : fmt("%.3f", r.sweep.front().threshold)) << ", "
    << fmt("%.0f s", r.seconds);
  return {shape && accuracy && learned && trial && sweep && time, d.str()};
}

Outcome determinism(const DeskRun& a, const DeskRun& b) {
  const auto& x = a.result;
  const auto& y = b.result;
  std::vector<std::string> diffs;
  if (x.canvas_hash != y.canvas_hash) diffs.push_back("canvas");
  if (x.signature_hashes != y.signature_hashes) diffs.push_back("signatures");
  if (x.train_hash != y.train_hash) diffs.push_back("train set");
  if (x.val_hash != y.val_hash) diffs.push_back("val set");
  if (x.trial_pool_hash != y.trial_pool_hash) diffs.push_back("trial pool");
  if (x.model_hash != y.model_hash || a.model_bytes != b.model_bytes || a.model_bytes.empty()) diffs.push_back("model");
  if (x.report_hash != y.report_hash || x.report != y.report) diffs.push_back("report");
  std::string detail = diffs.empty() ? "hashes, model file and report identical (report " + x.report_hash.substr(0, 12) + ")"
                                     : "differs:";
  for (const auto& d : diffs) detail += " " + d;
  return {diffs.empty(), detail};
}

Outcome identities() {
  double worst_a50 = 0.0, worst_gap = -1.0, worst_unit = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto mm = pod_oracle::records(8000 + seed, 300);
    auto um = mm;
    for (auto& r : um) r.size_mm *= 1000.0;
    const auto f = fit_hitmiss(mm);
    const auto g = fit_hitmiss(um);
    if (!f.usable() || !g.usable()) return {false, "oracle fit unusable at seed " + std::to_string(seed)};
    worst_a50 = std::max(worst_a50, std::abs(f.a50_mm + f.beta0 / f.beta1) / std::abs(f.a50_mm));
    for (const auto& p : pod_curve(f, size_grid(0.0, 10.0, 1000))) worst_gap = std::max(worst_gap, p.lower95 - p.pod);
    for (double a : size_grid(0.01, 10.0, 1000)) {
      const double u = pod(g, 1000.0 * a), v = pod(f, a);
      const double lu = pod_lower95(g, 1000.0 * a), lv = pod_lower95(f, a);
      worst_unit = std::max({worst_unit, std::abs(u - v) / v, std::abs(lu - lv) / lv});
    }
  }
  std::ostringstream d;
  d << "a50 rel err " << fmt("%.1e", worst_a50) << ", max(lower - pod) " << fmt("%.1e", worst_gap)
    << ", mm/um rel err " << fmt("%.1e", worst_unit);
  return {worst_a50 <= 1e-12 && worst_gap <= 0.0 && worst_unit <= 1e-9, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path work = fs::temp_directory_path() / "utaug-acceptance";
  app.add_option("--work-dir", work, "Scratch directory for the desk runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "virtual flaw round trip", round_trip);
  report(2, "gradient correctness", gradients);
  report(3, "envelope property", envelope);
  report(4, "POD oracle recovery", pod_recovery);
  report(5, "separation behaviour", separation);

  std::optional<DeskRun> first, second;
  report(6, "desk-scale experiment", [&] {
    first = run_desk(work / "desk-a");
    return desk(*first);
  });
  report(7, "determinism", [&] {
    if (!first) return Outcome{false, "first desk run did not complete"};
    second = run_desk(work / "desk-b");
    return determinism(*first, *second);
  });
  report(8, "POD identities", identities);

  std::cout << (8 - failures) << "/8 criteria pass" << std::endl;
  return failures == 0 ? 0 : 1;
}
