#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "utaug/bscan.hpp"
#include "utaug/errors.hpp"

using namespace utaug;

namespace {

BScan ramp(std::size_t ns, std::size_t nt) {
  std::vector<std::uint16_t> v(ns * nt);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint16_t>((i * 7919) % 65536);
  return BScan(ns, nt, std::move(v), {0.21, 0.0, "ramp"});
}

}  // namespace

TEST_CASE("canvas without noise is flat at the rounded mean") {
  NoiseParams p;
  p.base_mean = 1234.6;
  p.base_std = 0.0;
  const auto c = generate_canvas(p, 17, 23);
  for (auto v : c.amplitudes()) REQUIRE(v == 1235);
}

TEST_CASE("canvas generation is seeded") {
  NoiseParams p;
  p.base_std = 500.0;
  p.grain_corr_scan = 3;
  p.grain_corr_time = 5;
  p.geometry_echo_bands = {{40.0, 3.0, 3000.0}};
  p.seed = 9;
  CHECK(generate_canvas(p, 64, 96) == generate_canvas(p, 64, 96));
}

TEST_CASE("different seeds differ and sample mean is near base_mean") {
  NoiseParams a;
  a.base_mean = 2000.0;
  a.base_std = 500.0;
  a.seed = 1;
  NoiseParams b = a;
  b.seed = 2;
  const std::size_t ns = 200, nt = 300;
  const auto ca = generate_canvas(a, ns, nt);
  const auto cb = generate_canvas(b, ns, nt);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) differ += ca.amplitudes()[i] != cb.amplitudes()[i];
  CHECK(differ >= ca.size() / 100);
  for (const auto* c : {&ca, &cb}) {
    double sum = 0.0;
    for (auto v : c->amplitudes()) sum += v;
    const double mean = sum / static_cast<double>(c->size());
    CHECK(std::abs(mean - 2000.0) <= 5.0 * 500.0 / std::sqrt(static_cast<double>(ns * nt)));
  }
}

TEST_CASE("zero dimension is rejected") {
  CHECK_THROWS_AS(generate_canvas(NoiseParams{}, 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(generate_canvas(NoiseParams{}, 10, 0), std::invalid_argument);
}

TEST_CASE("noise params json round trip") {
  NoiseParams p;
  p.base_mean = 1500.0;
  p.grain_corr_time = 4;
  p.geometry_echo_bands = {{10.0, 2.0, 100.0}, {50.0, 1.0, 7.0}};
  p.seed = 77;
  const NoiseParams q = nlohmann::json(p).get<NoiseParams>();
  CHECK(q.base_mean == p.base_mean);
  CHECK(q.grain_corr_time == 4);
  REQUIRE(q.geometry_echo_bands.size() == 2);
  CHECK(q.geometry_echo_bands[1].amplitude == 7.0);
  CHECK(q.seed == 77);
}

TEST_CASE("UTB1 round trip of a full-size scan") {
  TempDir dir("utaug-bscan");
  const auto s = ramp(454, 5058);
  write_bscan(s, dir / "s.utb");
  const auto r = read_bscan(dir / "s.utb");
  CHECK(r == s);
  CHECK(r.metadata() == s.metadata());
}

TEST_CASE("UTB1 rejects wrong magic and truncation") {
  TempDir dir("utaug-bscan");
  write_bscan(ramp(8, 8), dir / "ok.utb");
  {
    std::ofstream f(dir / "magic.utb", std::ios::binary);
    f << "XXXX0123456789abcdef";
  }
  CHECK_THROWS_AS(read_bscan(dir / "magic.utb"), FormatError);
  {
    std::ofstream f(dir / "tiny.utb", std::ios::binary);
    f << "UTB1";
  }
  CHECK_THROWS_AS(read_bscan(dir / "tiny.utb"), CorruptFileError);

  std::vector<char> raw(std::filesystem::file_size(dir / "ok.utb"));
  std::ifstream(dir / "ok.utb", std::ios::binary).read(raw.data(), static_cast<std::streamsize>(raw.size()));
  raw.resize(raw.size() - 3);
  std::ofstream(dir / "cut.utb", std::ios::binary).write(raw.data(), static_cast<std::streamsize>(raw.size()));
  CHECK_THROWS_AS(read_bscan(dir / "cut.utb"), CorruptFileError);
}

TEST_CASE("crop") {
  const auto s = ramp(454, 5058);
  const auto c = crop(s, {0, 454, 1000, 454});
  CHECK(c.n_scan() == 454);
  CHECK(c.n_time() == 454);
  CHECK(c.at(3, 5) == s.at(3, 1005));
  CHECK(crop(s, Region::full(s)) == s);
  const auto small = ramp(10, 20);
  CHECK_THROWS_AS(crop(small, {0, 10, 5, 16}), std::invalid_argument);
  CHECK_THROWS_AS(crop(small, {0, 0, 0, 5}), std::invalid_argument);
}

TEST_CASE("downsample") {
  const auto s = ramp(454, 454);
  const auto d256 = downsample(s, 256, 256);
  CHECK(d256.n_scan() == 256);
  CHECK(d256.n_time() == 256);

  const auto flat = BScan::filled(40, 30, 812);
  for (auto k : {DownsampleKernel::max, DownsampleKernel::mean}) {
    const auto d = downsample(flat, 7, 5, k);
    for (auto v : d.amplitudes()) CHECK(v == 812);
  }
  CHECK_THROWS_AS(downsample(flat, 41, 30), std::invalid_argument);
}

TEST_CASE("a single spike survives max downsampling in one cell") {
  for (std::size_t pos = 0; pos < 16; ++pos) {
    std::vector<std::uint16_t> v(16, 0);
    v[pos] = 1000;
    const auto d = downsample(BScan(4, 4, v), 2, 2);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        // brute-force bin maximum
        std::uint16_t m = 0;
        for (std::size_t a = 2 * i; a < 2 * i + 2; ++a) {
          for (std::size_t b = 2 * j; b < 2 * j + 2; ++b) m = std::max(m, v[a * 4 + b]);
        }
        CHECK(d.at(i, j) == m);
        hits += d.at(i, j) == 1000;
      }
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("region composition") {
  const Region outer{10, 50, 20, 60};
  const Region inner{5, 4, 6, 3};
  CHECK(compose(outer, inner) == Region{15, 4, 26, 3});
}
