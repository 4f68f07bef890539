#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "utaug/eflaw.hpp"
#include "utaug/errors.hpp"
#include "utaug/random.hpp"

using namespace utaug;

namespace {

BScan noisy_canvas(std::size_t ns, std::size_t nt, std::uint64_t seed) {
  NoiseParams p;
  p.base_mean = 3000.0;
  p.base_std = 400.0;
  p.grain_corr_scan = 2;
  p.grain_corr_time = 3;
  p.seed = seed;
  return generate_canvas(p, ns, nt);
}

FlawSignature random_signature(Rng& rng, std::size_t ns, std::size_t nt, double nominal) {
  std::vector<std::int32_t> d(ns * nt);
  for (auto& x : d) x = static_cast<std::int32_t>(rng.index(2001)) - 1000;
  return FlawSignature(ns, nt, std::move(d), nominal, "random");
}

}  // namespace

TEST_CASE("extract over identical scans is all zero") {
  const auto c = noisy_canvas(30, 40, 1);
  const auto s = extract_flaw(c, c, {5, 10, 7, 12}, 4.0);
  for (auto d : s.deltas()) CHECK(d == 0);
  CHECK(s.scan_len() == 10);
  CHECK(s.time_len() == 12);
}

TEST_CASE("implant then extract recovers the signature") {
  Rng rng(11);
  const auto c = noisy_canvas(60, 80, 2);
  for (int k = 0; k < 50; ++k) {
    const auto sig = random_signature(rng, 1 + rng.index(20), 1 + rng.index(30), 4.0);
    const std::size_t ps = rng.index(60 - sig.scan_len() + 1);
    const std::size_t pt = rng.index(80 - sig.time_len() + 1);
    const auto r = implant(c, sig, {ps, pt, 1.0, false});
    REQUIRE_FALSE(r.clipped);
    const auto back = extract_flaw(r.scan, c, sig.placed_at(ps, pt), 4.0, "random");
    CHECK(back == sig);
    CHECK(erase_flaw(r.scan, c, sig.placed_at(ps, pt)) == c);
  }
}

TEST_CASE("erase over the full extent yields the reference") {
  const auto a = noisy_canvas(20, 20, 3);
  const auto b = noisy_canvas(20, 20, 4);
  CHECK(erase_flaw(a, b, Region::full(a)) == b);
  const auto erased = erase_flaw(a, b, {2, 5, 3, 6});
  const auto sig = extract_flaw(erased, b, {2, 5, 3, 6}, 1.0);
  for (auto d : sig.deltas()) CHECK(d == 0);
}

TEST_CASE("dimension mismatch and out of bounds regions are rejected") {
  const auto a = noisy_canvas(20, 20, 3);
  const auto b = noisy_canvas(20, 21, 3);
  CHECK_THROWS_AS(extract_flaw(a, b, {0, 2, 0, 2}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(erase_flaw(a, b, {0, 2, 0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(extract_flaw(a, a, {15, 6, 0, 2}, 1.0), std::invalid_argument);
  Rng rng(1);
  const auto sig = random_signature(rng, 5, 5, 1.0);
  CHECK_THROWS_AS(implant(a, sig, {16, 0, 1.0, false}), std::invalid_argument);
}

TEST_CASE("tiny scale leaves the canvas unchanged") {
  Rng rng(5);
  const auto c = noisy_canvas(20, 20, 6);
  const auto sig = random_signature(rng, 8, 8, 8.6);
  const auto r = implant(c, sig, {3, 4, 1e-9, false});
  CHECK(r.scan == c);
  CHECK(r.effective_size_mm == doctest::Approx(8.6e-9));
}

TEST_CASE("half scale on an 8.6 mm signature") {
  Rng rng(7);
  const auto c = noisy_canvas(40, 40, 8);
  const auto sig = random_signature(rng, 10, 12, 8.6);
  const auto r = implant(c, sig, {4, 9, 0.5, false});
  CHECK(r.effective_size_mm == doctest::Approx(4.3).epsilon(1e-15));
  for (std::size_t s = 0; s < 40; ++s) {
    for (std::size_t t = 0; t < 40; ++t) {
      const bool inside = s >= 4 && s < 14 && t >= 9 && t < 21;
      // half away from zero
      const double d = inside ? static_cast<double>(sig.at(s - 4, t - 9)) : 0.0;
      const double half = d >= 0 ? std::floor(0.5 * d + 0.5) : -std::floor(-0.5 * d + 0.5);
      CHECK(static_cast<double>(r.scan.at(s, t)) == static_cast<double>(c.at(s, t)) + half);
    }
  }
}

TEST_CASE("amplification is opt in and clipping is reported") {
  const auto c = BScan::filled(10, 10, 65000);
  const FlawSignature sig(2, 2, {1000, 0, 0, -10}, 2.0);
  CHECK_THROWS_AS(implant(c, sig, {0, 0, 1.5, false}), std::invalid_argument);
  const auto r = implant(c, sig, {0, 0, 1.5, true});
  CHECK(r.clipped);
  CHECK(r.scan.at(0, 0) == 65535);
  CHECK(r.scan.at(1, 1) == 64985);
  CHECK_THROWS_AS(implant(c, sig, {0, 0, 0.0, false}), std::invalid_argument);
  const auto low = implant(BScan::filled(4, 4, 3), FlawSignature(1, 1, {-10}, 1.0), {0, 0, 1.0, false});
  CHECK(low.clipped);
  CHECK(low.scan.at(0, 0) == 0);
}

TEST_CASE("copy_blank_region") {
  const auto c = noisy_canvas(40, 50, 9);
  CHECK(copy_blank_region(c, {5, 8, 6, 9}, 5, 6) == c);

  const Region a{2, 6, 3, 7};
  const Region b{20, 6, 30, 7};
  const auto out = copy_blank_region(c, a, b.scan_start, b.time_start);
  const auto sig = extract_flaw(out, c, b, 1.0);
  for (std::size_t s = 0; s < 6; ++s) {
    for (std::size_t t = 0; t < 7; ++t) {
      CHECK(sig.at(s, t) == static_cast<std::int32_t>(c.at(2 + s, 3 + t)) - c.at(20 + s, 30 + t));
    }
  }

  // Overlap reads from the unmodified canvas.
  const auto ov = copy_blank_region(c, {0, 10, 0, 10}, 3, 2);
  for (std::size_t s = 0; s < 10; ++s) {
    for (std::size_t t = 0; t < 10; ++t) CHECK(ov.at(3 + s, 2 + t) == c.at(s, t));
  }
  CHECK_THROWS_AS(copy_blank_region(c, {0, 10, 0, 10}, 35, 0), std::invalid_argument);
}

TEST_CASE("signature file round trip and errors") {
  TempDir dir("utaug-eflaw");
  Rng rng(12);
  const auto sig = random_signature(rng, 9, 13, 1.6);
  write_signature(sig, dir / "s.uts");
  CHECK(read_signature(dir / "s.uts") == sig);
  {
    std::ofstream f(dir / "bad.uts", std::ios::binary);
    f << "UTB1........";
  }
  CHECK_THROWS_AS(read_signature(dir / "bad.uts"), FormatError);
  {
    std::ofstream f(dir / "short.uts", std::ios::binary);
    f << "UT";
  }
  CHECK_THROWS_AS(read_signature(dir / "short.uts"), CorruptFileError);
}

TEST_CASE("truncate_length keeps leading scan lines") {
  const FlawSignature sig(3, 2, {1, 2, 3, 4, 5, 6}, 4.0, "x");
  const auto t = truncate_length(sig, 2);
  CHECK(t.scan_len() == 2);
  CHECK(std::vector<std::int32_t>(t.deltas().begin(), t.deltas().end()) == std::vector<std::int32_t>{1, 2, 3, 4});
  CHECK_THROWS_AS(truncate_length(sig, 0), std::invalid_argument);
  CHECK_THROWS_AS(truncate_length(sig, 4), std::invalid_argument);
}

TEST_CASE("synthetic kernel") {
  SyntheticFlawParams p;
  const auto k = synthesize_flaw_kernel(p, "k");
  CHECK(k.scan_len() == p.scan_len);
  CHECK(k.time_len() == p.time_len);
  CHECK(k.nominal_size_mm() == p.nominal_size_mm);
  std::int32_t peak = 0;
  for (auto d : k.deltas()) {
    CHECK(d >= 0);
    peak = std::max(peak, d);
  }
  CHECK(peak <= static_cast<std::int32_t>(p.peak_amplitude));
  CHECK(peak > 0);
  CHECK(synthesize_flaw_kernel(p, "k") == k);
  const SyntheticFlawParams q = nlohmann::json(p).get<SyntheticFlawParams>();
  CHECK(synthesize_flaw_kernel(q, "k") == k);
}
