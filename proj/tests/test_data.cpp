#include <cmath>
#include <filesystem>
#include <numbers>

#include "csifb/data.hpp"
#include "csifb/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace csifb;
using data::Complex;
using data::ComplexMatrix;
using testutil::Gen;

namespace {

ComplexMatrix random_matrix(Gen& g, std::size_t r, std::size_t c) {
  ComplexMatrix m(r, c);
  for (auto& v : m.values) v = {g.normal(), g.normal()};
  return m;
}

// Direct summation of F_d H F_a^H with unitary kernels.
ComplexMatrix naive_sparsify(const ComplexMatrix& h) {
  const double pi = std::numbers::pi;
  const std::size_t R = h.rows, C = h.cols;
  ComplexMatrix out(R, C);
  for (std::size_t p = 0; p < R; ++p) {
    for (std::size_t q = 0; q < C; ++q) {
      Complex acc = 0;
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          const double phase = -2 * pi * static_cast<double>(p * r) / static_cast<double>(R) +
                               2 * pi * static_cast<double>(q * c) / static_cast<double>(C);
          acc += h(r, c) * std::polar(1.0, phase);
        }
      }
      out(p, q) = acc / std::sqrt(static_cast<double>(R * C));
    }
  }
  return out;
}

double energy_rows(const ComplexMatrix& m, std::size_t begin, std::size_t end) {
  double e = 0;
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) e += std::norm(m(r, c));
  return e;
}

std::vector<std::uint8_t> serialize_small(std::size_t count) {
  data::GeneratorConfig cfg;
  cfg.subcarriers = 16;
  cfg.nc = 4;
  cfg.nt = 4;
  return data::serialize_dataset(data::build_dataset(data::generate_synthetic(count, cfg, 3), 4));
}

int kind_of(std::span<const std::uint8_t> bytes) {
  try {
    data::parse_dataset(bytes);
  } catch (const DataError& e) {
    return static_cast<int>(e.kind());
  }
  return -1;
}

}  // namespace

TEST_CASE("dft") {
  Gen g(20);
  SUBCASE("unitary matrix") {
    const auto f = data::dft_matrix(8);
    for (std::size_t a = 0; a < 8; ++a) {
      for (std::size_t b = 0; b < 8; ++b) {
        Complex ip = 0;
        for (std::size_t k = 0; k < 8; ++k) ip += f(k, a) * std::conj(f(k, b));
        CHECK(std::abs(ip - Complex(a == b ? 1.0 : 0.0)) < 1e-12);
      }
    }
  }
  SUBCASE("matches direct summation") {
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{4, 4}, {6, 4}, {5, 3}}) {
      const auto h = random_matrix(g, r, c);
      const auto fast = data::dft_sparsify(h);
      const auto slow = naive_sparsify(h);
      for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(std::abs(fast.values[i] - slow.values[i]) < 1e-10);
    }
  }
  SUBCASE("zero in, zero out") {
    const auto out = data::dft_sparsify(ComplexMatrix(8, 4));
    for (auto v : out.values) CHECK(v == Complex(0.0));
  }
  SUBCASE("norm preserved") {
    for (int t = 0; t < 20; ++t) {
      const auto h = random_matrix(g, 16, 8);
      CHECK(data::dft_sparsify(h).frobenius_norm() == doctest::Approx(h.frobenius_norm()).epsilon(1e-12));
    }
  }
}

TEST_CASE("truncate and realify") {
  ComplexMatrix h(3, 2);
  for (std::size_t i = 0; i < 6; ++i) h.values[i] = {static_cast<double>(i + 1), 0.0};
  const auto all = data::truncate_and_realify(h, 3);
  CHECK(all == std::vector<double>{1, 2, 3, 4, 5, 6, 0, 0, 0, 0, 0, 0});
  h(0, 1) = {2.0, -7.0};
  const auto top = data::truncate_and_realify(h, 1);
  CHECK(top == std::vector<double>{1, 2, 0, -7});
  CHECK_THROWS_AS(data::truncate_and_realify(h, 4), UsageError);
}

TEST_CASE("synthetic generator") {
  for (auto profile : {data::Profile::kIndoor, data::Profile::kOutdoor}) {
    CAPTURE(data::profile_name(profile));
    data::GeneratorConfig cfg;
    cfg.profile = profile;
    const auto channels = data::generate_synthetic(20, cfg, 11);
    REQUIRE(channels.size() == 20);
    for (const auto& h : channels) {
      CHECK(h.rows == 256);
      CHECK(h.cols == 32);
      CHECK(h.frobenius_norm() == doctest::Approx(1.0).epsilon(1e-12));
      const auto ad = data::dft_sparsify(h);
      CHECK(ad.frobenius_norm() == doctest::Approx(h.frobenius_norm()).epsilon(1e-6));
      // Every path delay is below nc, so the truncation keeps all the energy.
      CHECK(energy_rows(ad, 0, cfg.nc) / energy_rows(ad, 0, ad.rows) == doctest::Approx(1.0).epsilon(1e-12));
      const auto real = data::truncate_and_realify(ad, cfg.nc);
      CHECK(real.size() == 64 * 32);
    }
    CHECK(data::generate_synthetic(3, cfg, 11)[2].values == channels[2].values);
    CHECK(data::generate_synthetic(3, cfg, 12)[0].values != channels[0].values);
  }
  SUBCASE("streaming source matches the batch generator") {
    data::GeneratorConfig cfg;
    cfg.subcarriers = 64;
    cfg.nc = 16;
    cfg.nt = 16;
    cfg.profile = data::Profile::kOutdoor;
    const auto batch = data::generate_synthetic(9, cfg, 21);
    data::SyntheticSource source(cfg, 21);
    for (const auto& h : batch) CHECK(source.next().values == h.values);
    CHECK(data::synthesize_dataset(9, cfg, 21) == data::build_dataset(batch, cfg.nc));
    CHECK_THROWS_AS(data::synthesize_dataset(0, cfg, 21), UsageError);
  }
  SUBCASE("zero clusters") {
    data::GeneratorConfig cfg;
    cfg.clusters = 0;
    for (const auto& h : data::generate_synthetic(2, cfg, 1))
      for (auto v : h.values) CHECK(v == Complex(0.0));
  }
  SUBCASE("profiles parse") {
    CHECK(data::parse_profile("indoor-like") == data::Profile::kIndoor);
    CHECK(data::parse_profile("outdoor-like") == data::Profile::kOutdoor);
    CHECK_THROWS_AS(data::parse_profile("urban"), UsageError);
  }
}

TEST_CASE("normalization") {
  Gen g(21);
  const auto raw = g.values(1000, -3.0, 5.0);
  const auto n = data::fit_normalization(raw);
  double lo = 1, hi = 0;
  for (double x : raw) {
    const double y = n.normalize(x);
    lo = std::min(lo, y);
    hi = std::max(hi, y);
    CHECK(std::abs(n.denormalize(y) - x) < 1e-6);
  }
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(data::fit_normalization(std::vector<double>(5, 2.0)).scale == 1.0);

  SUBCASE("dataset values stay in the unit interval") {
    data::GeneratorConfig cfg;
    const auto ds = data::build_dataset(data::generate_synthetic(30, cfg, 4), 32);
    CHECK(ds.count() == 30);
    CHECK(ds.sample_size() == 2048);
    for (float v : ds.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    // raw_sample undoes the normalization of the stored float values.
    const auto raw0 = ds.raw_sample(0);
    const auto norm0 = ds.sample_double(0);
    for (std::size_t i = 0; i < raw0.size(); ++i) CHECK(std::abs(ds.norm.normalize(raw0[i]) - norm0[i]) < 1e-6);
  }
}

TEST_CASE("awgn") {
  data::GeneratorConfig cfg;
  const auto ds = data::build_dataset(data::generate_synthetic(100, cfg, 5), 32);

  SUBCASE("clean sentinel is the identity") {
    const auto x = ds.sample_double(3);
    CHECK(data::add_awgn(x, ds.norm, data::kCleanSnr, 1) == x);
  }
  SUBCASE("deterministic under a seed") {
    const auto x = ds.sample_double(0);
    CHECK(data::add_awgn(x, ds.norm, 10, 9) == data::add_awgn(x, ds.norm, 10, 9));
    CHECK(data::add_awgn(x, ds.norm, 10, 9) != data::add_awgn(x, ds.norm, 10, 8));
  }
  SUBCASE("invalid levels") {
    const auto x = ds.sample_double(0);
    CHECK_THROWS_AS(data::add_awgn(x, ds.norm, std::nan(""), 1), UsageError);
    CHECK_THROWS_AS(data::add_awgn(x, ds.norm, -INFINITY, 1), UsageError);
  }
  SUBCASE("empirical SNR over 10^4 noisy samples") {
    for (double snr : {0.0, 10.0, 20.0}) {
      double signal = 0, noise = 0;
      for (std::size_t i = 0; i < 10000; ++i) {
        const auto x = ds.sample_double(i % 100);
        const auto raw = ds.raw_sample(i % 100);
        const auto y = data::add_awgn(x, ds.norm, snr, 1000 + i);
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double e = ds.norm.denormalize(y[j]) - raw[j];
          signal += raw[j] * raw[j];
          noise += e * e;
        }
      }
      CHECK(std::abs(10 * std::log10(signal / noise) - snr) < 0.2);
    }
  }
}

TEST_CASE("dataset files") {
  data::GeneratorConfig cfg;
  const auto ds = data::build_dataset(data::generate_synthetic(7, cfg, 6), 32);

  SUBCASE("round trip is bit-exact") {
    const auto path = std::filesystem::temp_directory_path() / "csifb_test_roundtrip.csid";
    data::save_dataset(path, ds);
    const auto back = data::load_dataset(path);
    std::filesystem::remove(path);
    CHECK(back == ds);
    CHECK(data::serialize_dataset(back) == data::serialize_dataset(ds));
  }
  SUBCASE("payload size") {
    const auto bytes = data::serialize_dataset(ds);
    CHECK(bytes.size() == 4 + 2 + 4 + 12 + 7 * 2 * 32 * 32 * 4 + 16);
  }
  SUBCASE("distinct error categories") {
    using K = DataError::Kind;
    const auto good = serialize_small(3);
    REQUIRE(kind_of(good) == -1);
    auto bad = good;
    bad[1] = 'X';
    CHECK(kind_of(bad) == static_cast<int>(K::kBadMagic));
    bad = good;
    bad[4] = 9;
    CHECK(kind_of(bad) == static_cast<int>(K::kVersionMismatch));
    bad = good;
    bad.resize(good.size() - 20);
    CHECK(kind_of(bad) == static_cast<int>(K::kTruncated));
    bad = good;
    bad[10] = 3;  // leading extent must be 2
    CHECK(kind_of(bad) == static_cast<int>(K::kExtentMismatch));
    bad = good;
    bad.push_back(0);
    CHECK(kind_of(bad) == static_cast<int>(K::kCorrupt));
    for (std::size_t cut = 0; cut < 22; ++cut)
      CHECK(kind_of(std::span<const std::uint8_t>(good.data(), cut)) == static_cast<int>(K::kTruncated));
    CHECK_THROWS_AS(data::load_dataset("/nonexistent/dir/x.csid"), DataError);
  }
}

TEST_CASE("splits") {
  CHECK(data::split_counts(150000).train == 100000);
  CHECK(data::split_counts(150000).val == 30000);
  CHECK(data::split_counts(150000).test == 20000);
  const auto s = data::split_counts(1500);
  CHECK((s.train == 1000 && s.val == 300 && s.test == 200));
  Gen g(22);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = g.index(0, 100000);
    const auto c = data::split_counts(n);
    CHECK(c.train + c.val + c.test == n);
    CHECK(c.train == n * 10 / 15);
    CHECK(c.val == n * 3 / 15);
  }
  data::GeneratorConfig cfg;
  cfg.subcarriers = 16;
  cfg.nc = 4;
  cfg.nt = 4;
  const auto all = data::build_dataset(data::generate_synthetic(31, cfg, 2), 4);
  const auto parts = data::split_dataset(all);
  CHECK(parts.train.count() == 20);
  CHECK(parts.val.count() == 6);
  CHECK(parts.test.count() == 5);
  CHECK(parts.test.norm == all.norm);
  CHECK(parts.val.sample_double(0) == all.sample_double(20));
  CHECK(parts.test.sample_double(4) == all.sample_double(30));
}
