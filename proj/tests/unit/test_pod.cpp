#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "pod_oracle.hpp"
#include "utaug/errors.hpp"
#include "utaug/pod.hpp"

using namespace utaug;

namespace {

std::vector<HitMissRecord> all_hits(std::initializer_list<double> sizes) {
  std::vector<HitMissRecord> out;
  for (double a : sizes) out.push_back({a, true, "s", "i" + std::to_string(out.size()), false});
  return out;
}

double se(const PodFit& f, int i) { return std::sqrt(f.covariance[i][i]); }

}  // namespace

TEST_CASE("oracle coefficients are recovered") {
  const auto recs = pod_oracle::records(2024);
  const auto f = fit_hitmiss(recs);
  REQUIRE(f.usable());
  CHECK(f.n_records == 1000);
  CHECK(std::abs(f.beta0 - pod_oracle::kBeta0) <= 3.0 * se(f, 0));
  CHECK(std::abs(f.beta1 - pod_oracle::kBeta1) <= 3.0 * se(f, 1));
  CHECK(std::abs(f.a90_mm - pod_oracle::true_a90()) <= 0.1 * pod_oracle::true_a90());
  CHECK(pod_oracle::true_a90() == doctest::Approx(3.0986).epsilon(1e-4));
}

TEST_CASE("fit identities") {
  const auto f = fit_hitmiss(pod_oracle::records(7));
  REQUIRE(f.usable());
  CHECK(std::abs(f.a50_mm - (-f.beta0 / f.beta1)) <= 1e-12 * std::abs(f.a50_mm));
  CHECK(f.a50_mm < f.a90_mm);
  CHECK(f.a90_mm < f.a90_95_mm);
  CHECK(f.covariance[0][1] == f.covariance[1][0]);
  CHECK(f.covariance[0][0] > 0.0);
  CHECK(f.covariance[0][0] * f.covariance[1][1] - f.covariance[0][1] * f.covariance[1][0] > 0.0);
  CHECK(pod(f, f.a50_mm) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pod(f, f.a90_mm) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(pod_lower95(f, f.a90_95_mm) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("a90/95 matches a fine grid scan of the lower bound") {
  const auto f = fit_hitmiss(pod_oracle::records(2024));
  REQUIRE(f.usable());
  const double grid = pod_oracle::grid_scan_a_p_lower(f, 0.9, 0.0, 10.0, 1e-4);
  REQUIRE(std::isfinite(grid));
  CHECK(std::abs(f.a90_95_mm - grid) <= 1e-3);
}

TEST_CASE("zero covariance collapses the bound onto the fit") {
  auto f = fit_hitmiss(pod_oracle::records(3));
  REQUIRE(f.usable());
  f.covariance = {};
  CHECK(a_p_lower_95(f, 0.9) == doctest::Approx(a_p(f, 0.9)).epsilon(1e-12));
  CHECK(a_p_lower_95(f, 0.7) == doctest::Approx(a_p(f, 0.7)).epsilon(1e-12));
}

TEST_CASE("record order does not change the fit") {
  auto recs = pod_oracle::records(5, 300);
  const auto a = fit_hitmiss(recs);
  Rng rng(99);
  rng.shuffle(recs);
  const auto b = fit_hitmiss(recs);
  std::reverse(recs.begin(), recs.end());
  const auto c = fit_hitmiss(recs);
  for (const auto* g : {&b, &c}) {
    CHECK(g->beta0 == a.beta0);
    CHECK(g->beta1 == a.beta1);
    CHECK(g->covariance == a.covariance);
    CHECK(g->a90_95_mm == a.a90_95_mm);
    CHECK(g->log_likelihood_trace == a.log_likelihood_trace);
  }
}

TEST_CASE("millimetre and micrometre fits agree") {
  auto mm = pod_oracle::records(8, 400);
  auto um = mm;
  for (auto& r : um) r.size_mm *= 1000.0;
  const auto f = fit_hitmiss(mm);
  const auto g = fit_hitmiss(um);
  REQUIRE(f.usable());
  REQUIRE(g.usable());
  for (double a : size_grid(0.0, 5.0, 21)) {
    CHECK(std::abs(pod(g, 1000.0 * a) - pod(f, a)) <= 1e-9 * pod(f, a));
    CHECK(std::abs(pod_lower95(g, 1000.0 * a) - pod_lower95(f, a)) <= 1e-9 * pod_lower95(f, a));
  }
  CHECK(g.a90_95_mm == doctest::Approx(1000.0 * f.a90_95_mm).epsilon(1e-9));

  // In metres the slope is in the thousands per unit.
  auto m = mm;
  for (auto& r : m) r.size_mm /= 1000.0;
  const auto h = fit_hitmiss(m);
  REQUIRE(h.usable());
  CHECK_FALSE(h.separation_detected);
  CHECK(h.beta1 == doctest::Approx(1000.0 * f.beta1).epsilon(1e-9));
  CHECK(h.a90_95_mm == doctest::Approx(f.a90_95_mm / 1000.0).epsilon(1e-9));
}

TEST_CASE("newton steps never lower the likelihood") {
  const auto f = fit_hitmiss(pod_oracle::records(11, 200));
  REQUIRE(f.log_likelihood_trace.size() >= 2);
  for (std::size_t i = 1; i < f.log_likelihood_trace.size(); ++i) {
    CHECK(f.log_likelihood_trace[i] >= f.log_likelihood_trace[i - 1]);
  }
  CHECK(f.log_likelihood == f.log_likelihood_trace.back());
}

TEST_CASE("separated designs are flagged without estimates") {
  const auto hits = all_hits({0.9, 1.5, 2.2, 4.0, 8.6});
  const auto f = fit_hitmiss(hits);
  CHECK(f.separation_detected);
  CHECK_FALSE(f.usable());
  CHECK(std::isnan(f.beta0));
  CHECK(std::isnan(f.a90_95_mm));
  CHECK_THROWS_AS(a_p(f, 0.9), InvalidStateError);
  CHECK_THROWS_AS(pod(f, 1.0), InvalidStateError);

  // Every zero-size miss lies below every hit: still completely separated.
  const auto aug = fit_hitmiss(augment_zero_misses(hits, 30));
  CHECK(aug.separation_detected);

  std::vector<HitMissRecord> ordered{{1.0, false, "", "a", false}, {2.0, false, "", "b", false},
                                     {2.0, true, "", "c", false}, {3.0, true, "", "d", false}};
  CHECK(fit_hitmiss(ordered).separation_detected);

  std::vector<HitMissRecord> one_size{{2.0, false, "", "a", false}, {2.0, true, "", "b", false}};
  const auto d = fit_hitmiss(one_size);
  CHECK_FALSE(d.usable());
  CHECK_FALSE(d.separation_detected);
}

TEST_CASE("zero-size augmentation") {
  const auto recs = pod_oracle::records(4, 50);
  CHECK(augment_zero_misses(recs, 0) == recs);
  const auto aug = augment_zero_misses(recs, 30, "subj");
  REQUIRE(aug.size() == 80);
  CHECK(std::equal(recs.begin(), recs.end(), aug.begin()));
  for (std::size_t i = 50; i < 80; ++i) {
    CHECK(aug[i].size_mm == 0.0);
    CHECK_FALSE(aug[i].hit);
    CHECK(aug[i].subject_id == "subj");
  }
}

TEST_CASE("zero-size misses do not raise a90/95 on mixed data") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto recs = pod_oracle::records(seed, 120);
    const auto before = fit_hitmiss(recs);
    const auto after = fit_hitmiss(augment_zero_misses(recs, 30));
    REQUIRE(before.usable());
    REQUIRE(after.usable());
    INFO("seed " << seed);
    CHECK(after.a90_95_mm <= before.a90_95_mm);
  }
}

TEST_CASE("reporting rule") {
  const auto ml = all_hits({0.9, 1.2, 1.6, 2.4, 4.0, 8.6});
  const auto ml_fit = fit_hitmiss(augment_zero_misses(ml, 30));
  const auto r = report_a9095(ml_fit, augment_zero_misses(ml, 30));
  CHECK(r.size_mm == 0.9);
  CHECK(r.method == kSmallestFoundTag);

  const auto single = augment_zero_misses(all_hits({2.0}), 30);
  const auto s = report_a9095(fit_hitmiss(single), single);
  CHECK(s.size_mm == 2.0);
  CHECK(s.method == kSmallestFoundTag);

  const auto mixed = pod_oracle::records(2024);
  const auto f = fit_hitmiss(mixed);
  const auto m = report_a9095(f, mixed);
  CHECK(m.method == kHandbookTag);
  CHECK(m.size_mm == a_p_lower_95(f, 0.9));

  const auto zeros = augment_zero_misses({}, 30);
  CHECK_THROWS_AS(report_a9095(f, zeros), std::invalid_argument);
}

TEST_CASE("input errors") {
  CHECK_THROWS_AS(fit_hitmiss(std::vector<HitMissRecord>{}), std::invalid_argument);
  std::vector<HitMissRecord> blanks{{0.0, true, "", "b", true}};
  CHECK_THROWS_AS(fit_hitmiss(blanks), std::invalid_argument);
  FitOptions log_opts;
  log_opts.scale = SizeScale::log;
  const auto with_zero = augment_zero_misses(pod_oracle::records(1, 20), 1);
  CHECK_THROWS_AS(fit_hitmiss(with_zero, log_opts), std::invalid_argument);
  std::vector<HitMissRecord> negative{{-1.0, true, "", "n", false}};
  CHECK_THROWS_AS(fit_hitmiss(negative), std::invalid_argument);
}

TEST_CASE("log-scale fit") {
  auto recs = pod_oracle::records(6, 500);
  recs.erase(std::remove_if(recs.begin(), recs.end(), [](const auto& r) { return r.size_mm <= 0.0; }), recs.end());
  FitOptions opts;
  opts.scale = SizeScale::log;
  const auto f = fit_hitmiss(recs, opts);
  REQUIRE(f.usable());
  CHECK(f.beta1 > 0.0);
  CHECK(f.a50_mm == doctest::Approx(std::exp(-f.beta0 / f.beta1)).epsilon(1e-12));
  CHECK(f.a90_95_mm > f.a90_mm);
}

TEST_CASE("a lower bound that never reaches p has no solution") {
  auto f = fit_hitmiss(pod_oracle::records(3, 200));
  REQUIRE(f.usable());
  f.covariance[1][1] = 100.0 * f.beta1 * f.beta1;
  CHECK_THROWS_AS(a_p_lower_95(f, 0.9), NoSolutionError);
}

TEST_CASE("trial scoring") {
  const std::vector<TruthEntry> truth{{"a", true, 2.0, 10.0}, {"b", false, 0.0, 0.0}, {"c", true, 4.0, 30.0}};
  SUBCASE("marks at the centres and none elsewhere") {
    const std::vector<ResponseEntry> resp{{"a", {10.0}}, {"b", {}}, {"c", {30.0}}};
    const auto s = score_trial(resp, truth, "subj");
    CHECK(s.false_call_count == 0);
    REQUIRE(s.records.size() == 3);
    CHECK(s.records[0].hit);
    CHECK(s.records[2].hit);
    CHECK(s.records[1].false_call_context);
    CHECK(s.records[1].size_mm == 0.0);
    CHECK(s.records[0].subject_id == "subj");
  }
  SUBCASE("a mark on a blank image is a false call") {
    const std::vector<ResponseEntry> resp{{"a", {}}, {"b", {3.0, 7.0}}, {"c", {}}};
    const auto s = score_trial(resp, truth, "subj");
    CHECK(s.false_call_count == 2);
    CHECK(s.records[1].hit);
    CHECK_FALSE(s.records[0].hit);
    ScoreOptions presence;
    presence.presence_only = true;
    CHECK(score_trial(resp, truth, "subj", presence).false_call_count == 1);
  }
  SUBCASE("just outside the tolerance is a miss and a false call") {
    const double off = 10.0 + 5.0 + 1e-9;
    const std::vector<ResponseEntry> resp{{"a", {off}}, {"b", {}}, {"c", {35.0}}};
    const auto s = score_trial(resp, truth, "subj");
    CHECK_FALSE(s.records[0].hit);
    CHECK(s.records[2].hit);
    CHECK(s.false_call_count == 1);
    ScoreOptions presence;
    presence.presence_only = true;
    const auto p = score_trial(resp, truth, "subj", presence);
    CHECK(p.records[0].hit);
    CHECK(p.false_call_count == 0);
  }
  SUBCASE("responses must cover the truth exactly once") {
    CHECK_THROWS_AS(score_trial(std::vector<ResponseEntry>{{"a", {}}, {"b", {}}, {"z", {}}}, truth, "s"),
                    std::invalid_argument);
    CHECK_THROWS_AS(score_trial(std::vector<ResponseEntry>{{"a", {}}, {"b", {}}}, truth, "s"), std::invalid_argument);
    CHECK_THROWS_AS(score_trial(std::vector<ResponseEntry>{{"a", {}}, {"a", {}}, {"b", {}}, {"c", {}}}, truth, "s"),
                    std::invalid_argument);
  }
}

TEST_CASE("pod curve matches pointwise evaluation") {
  const auto f = fit_hitmiss(pod_oracle::records(12, 500));
  REQUIRE(f.usable());
  Rng rng(1);
  std::vector<double> sizes(10);
  for (auto& a : sizes) a = rng.uniform(0.0, 6.0);
  const auto curve = pod_curve(f, sizes);
  REQUIRE(curve.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const double a = sizes[i];
    const double eta = f.beta0 + f.beta1 * a;
    const double var = f.covariance[0][0] + 2 * a * f.covariance[0][1] + a * a * f.covariance[1][1];
    CHECK(std::abs(curve[i].pod - 1.0 / (1.0 + std::exp(-eta))) <= 1e-12);
    CHECK(std::abs(curve[i].lower95 - 1.0 / (1.0 + std::exp(-(eta - 1.645 * std::sqrt(var))))) <= 1e-12);
    CHECK(curve[i].lower95 <= curve[i].pod);
  }
  const auto grid = size_grid(0.0, 2.0, 5);
  CHECK(grid == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
}

TEST_CASE("csv and json") {
  TempDir dir("utaug-pod");
  auto recs = pod_oracle::records(13, 40);
  recs.push_back({0.0, true, "oracle", "blank-1", true});
  write_records_csv(recs, dir / "r.csv");
  CHECK(read_records_csv(dir / "r.csv") == recs);
  CHECK(parse_records_csv(records_to_csv(recs)) == recs);
  CHECK_THROWS_AS(parse_records_csv("image_id,size_mm\nx,1\n"), std::invalid_argument);

  const auto sep = fit_hitmiss(all_hits({1.0, 2.0}));
  const auto j = fit_to_json(sep);
  CHECK(j.at("beta0").is_null());
  CHECK(j.at("separation_detected").get<bool>());
  const auto ok = fit_hitmiss(pod_oracle::records(2024));
  const auto r = fit_report_json(ok, pod_oracle::records(2024));
  CHECK(r.at("a90_95").at("method") == kHandbookTag);
  CHECK(r.at("fit").at("a90_95_finite").get<bool>());
}
