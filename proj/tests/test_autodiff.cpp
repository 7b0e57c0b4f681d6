#include <cmath>
#include <numbers>

#include "csifb/errors.hpp"
#include "csifb/grad_check.hpp"
#include "csifb/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace csifb;
using ad::Tensor;
using testutil::Gen;

namespace {

// Weighted sum with fixed random weights so every output element matters.
Tensor probe_sum(const Tensor& y, std::uint64_t seed) {
  Gen g(seed);
  return ad::sum(ad::mul(y, g.tensor(y.shape())));
}

void require_grad_ok(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double tol = 1e-4) {
  auto r = ad::grad_check(f, x, 1e-3, tol);
  INFO("max rel error " << r.max_rel_error << " at " << r.worst_index);
  CHECK(r.passed);
}

// Naive triple loop product.
std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t r, std::size_t k,
                                 std::size_t c) {
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * c + j] += a[i * k + t] * b[t * c + j];
  return out;
}

}  // namespace

TEST_CASE("tensor construction enforces extents") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  CHECK(t.numel() == 6);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    Gen g(1);
    Tensor m = g.tensor({3, 3});
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = ad::matmul(eye, m);
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.values()[i] == m.values()[i]);
  }
  SUBCASE("hand example") {
    auto y = ad::matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
    CHECK(y.shape() == ad::Shape{2, 1});
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == 7.0);
  }
  SUBCASE("gradient of sum(A B) w.r.t. A is B's row sums broadcast") {
    Gen g(2);
    Tensor a = g.tensor({3, 4}, -1, 1, true);
    Tensor b = g.tensor({4, 5});
    ad::sum(ad::matmul(a, b)).backward();
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t t = 0; t < 4; ++t) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) row += b.values()[t * 5 + j];
        CHECK(a.grad()[i * 4 + t] == doctest::Approx(row).epsilon(1e-12));
      }
    }
    require_grad_ok([&](const Tensor& x) { return ad::sum(ad::matmul(x, b)); }, a);
  }
  SUBCASE("mismatch names extents") {
    try {
      ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
      CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
  }
  SUBCASE("matches naive product on random shapes") {
    Gen g(3);
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t r = g.index(1, 7), k = g.index(1, 7), c = g.index(1, 7);
      Tensor a = g.tensor({r, k}), b = g.tensor({k, c});
      auto expect = naive_matmul(a.values(), b.values(), r, k, c);
      auto y = ad::matmul(a, b);
      for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("affine equals matmul plus bias") {
  Gen g(4);
  Tensor x = g.tensor({5, 3}), w = g.tensor({3, 4}), b = g.tensor({4});
  auto fused = ad::affine(x, w, b);
  auto composed = ad::add_bias(ad::matmul(x, w), b, 1);
  for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(fused.values()[i] == doctest::Approx(composed.values()[i]));
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::affine(t, w, b), 1); }, x);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::affine(x, t, b), 2); }, w);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::affine(x, w, t), 3); }, b);
}

TEST_CASE("batched matmul gradients") {
  Gen g(5);
  for (bool tb : {false, true}) {
    Tensor a = g.tensor({2, 3, 4});
    Tensor b = tb ? g.tensor({2, 5, 4}) : g.tensor({2, 4, 5});
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::batched_matmul(t, b, tb), 4); }, a);
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::batched_matmul(a, t, tb), 5); }, b);
  }
}

TEST_CASE("conv2d") {
  SUBCASE("unit 1x1 kernel is the identity") {
    Gen g(6);
    Tensor x = g.tensor({1, 4, 5});
    auto y = ad::conv2d(x, Tensor({1, 1, 1, 1}, {1.0}), 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
  }
  SUBCASE("all-ones 3x3 on all-ones 4x4") {
    auto y = ad::conv2d(Tensor::full({1, 4, 4}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), 1, 0);
    CHECK(y.shape() == ad::Shape{1, 2, 2});
    for (double v : y.values()) CHECK(v == 9.0);
  }
  SUBCASE("stride-8 8x8 kernel on 32x32 gives 4x4") {
    auto y = ad::conv2d(Tensor::zeros({3, 32, 32}), Tensor::zeros({5, 3, 8, 8}), 8, 0);
    CHECK(y.shape() == ad::Shape{5, 4, 4});
  }
  SUBCASE("non-integral output extent is rejected") {
    CHECK_THROWS_AS(ad::conv2d(Tensor::zeros({1, 5, 5}), Tensor::zeros({1, 1, 2, 2}), 2, 0), ShapeError);
    CHECK_THROWS_AS(ad::conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0), ShapeError);
  }
  SUBCASE("matches direct cross-correlation") {
    Gen g(7);
    Tensor x = g.tensor({2, 5, 6}), k = g.tensor({3, 2, 3, 2});
    auto y = ad::conv2d(x, k, 1, {1, 0});
    REQUIRE(y.shape() == ad::Shape{3, 5, 5});
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (std::size_t i = 0; i < 3; ++i)
              for (std::size_t j = 0; j < 2; ++j) {
                const long rr = static_cast<long>(r + i) - 1;
                if (rr < 0 || rr >= 5) continue;
                s += x.values()[(ci * 5 + rr) * 6 + c + j] * k.values()[((o * 2 + ci) * 3 + i) * 2 + j];
              }
          CHECK(y.values()[(o * 5 + r) * 5 + c] == doctest::Approx(s).epsilon(1e-12));
        }
  }
  SUBCASE("gradients on random shapes") {
    Gen g(8);
    struct Case {
      ad::Shape x, k;
      std::size_t stride;
      ad::Padding pad;
    };
    for (const Case& c : {Case{{2, 5, 5}, {3, 2, 3, 3}, 1, 1}, Case{{1, 8, 8}, {2, 1, 4, 4}, 4, 0},
                          Case{{3, 4, 9}, {2, 3, 1, 9}, 1, {0, 4}}}) {
      Tensor x = g.tensor(c.x), k = g.tensor(c.k);
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::conv2d(t, k, c.stride, c.pad), 9); }, x);
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::conv2d(x, t, c.stride, c.pad), 10); }, k);
    }
  }
}

TEST_CASE("conv_transpose2d") {
  SUBCASE("adjoint of conv2d") {
    Gen g(11);
    struct Case {
      ad::Shape x, k;
      std::size_t stride, pad;
    };
    for (const Case& c : {Case{{2, 6, 6}, {3, 2, 3, 3}, 1, 1}, Case{{1, 8, 8}, {2, 1, 2, 2}, 2, 0},
                          Case{{3, 7, 7}, {2, 3, 3, 3}, 2, 1}}) {
      Tensor x = g.tensor(c.x), k = g.tensor(c.k);
      Tensor y = ad::conv2d(x, k, c.stride, c.pad);
      Tensor z = g.tensor(y.shape());
      Tensor back = ad::conv_transpose2d(z, k, c.stride, c.pad);
      REQUIRE(back.shape() == x.shape());
      const double lhs = testutil::dot(y.values(), z.values());
      const double rhs = testutil::dot(x.values(), back.values());
      CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)));
    }
  }
  SUBCASE("output extent formula") {
    auto y = ad::conv_transpose2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({2, 3, 3, 3}), 2, 1);
    CHECK(y.shape() == ad::Shape{3, 7, 7});
  }
  SUBCASE("unit kernel is the identity") {
    Gen g(12);
    Tensor x = g.tensor({1, 3, 4});
    auto y = ad::conv_transpose2d(x, Tensor({1, 1, 1, 1}, {1.0}), 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
  }
  SUBCASE("gradients") {
    Gen g(13);
    Tensor x = g.tensor({2, 4, 4}), k = g.tensor({2, 3, 3, 3});
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::conv_transpose2d(t, k, 1, 1), 14); }, x);
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::conv_transpose2d(x, t, 2, 1), 15); }, k);
  }
}

TEST_CASE("activations") {
  CHECK(ad::gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(ad::tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  // 1 * Phi(1), Phi(1) = 0.841344746068542948585...
  CHECK(ad::gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  Gen g(16);
  for (auto kind : {ad::Activation::kGelu, ad::Activation::kTanh, ad::Activation::kSigmoid}) {
    for (const ad::Shape& s : {ad::Shape{7}, ad::Shape{3, 4}, ad::Shape{2, 3, 2}}) {
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::activation(t, kind), 17); }, g.tensor(s, -3, 3));
    }
  }
}

TEST_CASE("softmax") {
  SUBCASE("uniform input") {
    auto y = ad::softmax(Tensor::full({5}, 2.5), 0);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("[0, ln 3]") {
    auto y = ad::softmax(Tensor({2}, {0.0, std::log(3.0)}), 0);
    CHECK(y.values()[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(y.values()[1] == doctest::Approx(0.75).epsilon(1e-15));
  }
  SUBCASE("rows sum to one, shift invariance, large inputs") {
    Gen g(18);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor x = g.tensor({3, 4, 5}, -50, 50);
      auto y = ad::softmax(x, axis);
      std::vector<double> shifted(x.values().begin(), x.values().end());
      for (double& v : shifted) v += 700.0;
      auto y2 = ad::softmax(Tensor(x.shape(), shifted), axis);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(y.values()[i] > 0.0);
        CHECK(std::abs(y.values()[i] - y2.values()[i]) < 1e-6);
      }
      const std::size_t stride = axis == 0 ? 20 : axis == 1 ? 5 : 1;
      const std::size_t extent = x.dim(axis);
      for (std::size_t base = 0; base < y.numel(); ++base) {
        if ((base / stride) % extent != 0) continue;
        double total = 0.0;
        for (std::size_t j = 0; j < extent; ++j) total += y.values()[base + j * stride];
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    }
  }
  SUBCASE("gradients") {
    Gen g(19);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::softmax(t, axis), 20); }, g.tensor({4, 6}, -2, 2));
    }
  }
}

TEST_CASE("layer norm") {
  SUBCASE("constant input") {
    auto y = ad::layer_norm(Tensor::full({3, 4}, 7.0), Tensor::full({4}, 1.0), Tensor::zeros({4}), 1);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("zero mean, unit variance") {
    Gen g(21);
    auto y = ad::layer_norm(g.tensor({6, 32}, -5, 5), Tensor::full({32}, 1.0), Tensor::zeros({32}), 1);
    for (std::size_t r = 0; r < 6; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 32; ++c) mean += y.values()[r * 32 + c] / 32;
      for (std::size_t c = 0; c < 32; ++c) var += std::pow(y.values()[r * 32 + c] - mean, 2) / 32;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-5);
    }
  }
  SUBCASE("gradients for input, gain and bias") {
    Gen g(22);
    for (const ad::Shape& s : {ad::Shape{3, 5}, ad::Shape{2, 3, 4}, ad::Shape{6}}) {
      Tensor x = g.tensor(s, -2, 2);
      Tensor gain = g.tensor({s.back()}, 0.5, 1.5), bias = g.tensor({s.back()});
      const std::size_t axis = s.size() - 1;
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::layer_norm(t, gain, bias, axis), 23); }, x);
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::layer_norm(x, t, bias, axis), 24); }, gain);
      require_grad_ok([&](const Tensor& t) { return probe_sum(ad::layer_norm(x, gain, t, axis), 25); }, bias);
    }
  }
}

TEST_CASE("window partition and merge") {
  SUBCASE("L=32, W=8 gives 16 windows of 64 tokens") {
    auto w = ad::window_partition(Tensor::zeros({4, 32, 32}), 8);
    CHECK(w.shape() == ad::Shape{16, 64, 4});
  }
  SUBCASE("W = L is one window in row-major scan order") {
    Gen g(26);
    Tensor x = g.tensor({2, 3, 3});
    auto w = ad::window_partition(x, 3);
    REQUIRE(w.shape() == ad::Shape{1, 9, 2});
    for (std::size_t t = 0; t < 9; ++t)
      for (std::size_t c = 0; c < 2; ++c) CHECK(w.values()[t * 2 + c] == x.values()[c * 9 + t]);
  }
  SUBCASE("token placement") {
    // Window (1, 0) of a 4x4 map with W=2 starts at row 2, column 0.
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
    auto w = ad::window_partition(Tensor({1, 4, 4}, v), 2);
    CHECK(w.values()[2 * 4 + 0] == 8.0);
    CHECK(w.values()[2 * 4 + 3] == 13.0);
  }
  SUBCASE("round trip is bit-exact") {
    Gen g(27);
    for (std::size_t trial = 0; trial < 5; ++trial) {
      const std::size_t win = g.index(1, 4), m = g.index(1, 4), d = g.index(1, 5);
      Tensor x = g.tensor({d, win * m, win * m}, -1e3, 1e3);
      auto back = ad::window_merge(ad::window_partition(x, win), win * m);
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.values()[i] == x.values()[i]);
    }
  }
  SUBCASE("W must divide L") { CHECK_THROWS_AS(ad::window_partition(Tensor::zeros({1, 6, 6}), 4), ShapeError); }
  SUBCASE("gradients") {
    Gen g(28);
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::window_partition(t, 2), 29); }, g.tensor({3, 4, 4}));
    require_grad_ok([&](const Tensor& t) { return probe_sum(ad::window_merge(t, 4), 30); }, g.tensor({4, 4, 3}));
  }
}

TEST_CASE("shape ops and elementwise gradients") {
  Gen g(31);
  Tensor a = g.tensor({3, 4}), b = g.tensor({3, 4});
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::reshape(t, {2, 6}), 32); }, a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::permute(ad::reshape(t, {3, 2, 2}), {2, 0, 1}), 33); },
                  a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::concat({t, b, t}), 34); }, a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::add(t, b), 35); }, a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::sub(b, t), 36); }, a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::mul(t, t), 37); }, a);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::scale(t, -2.5), 38); }, a);
  require_grad_ok([&](const Tensor& t) { return ad::sum_squares(t); }, a);
  Tensor bias = g.tensor({3});
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::add_bias(a, t, 0), 39); }, bias);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::add_bias(t, bias, 0), 40); }, a);
}

TEST_CASE("fused attention matches the composed form") {
  Gen g(41);
  const std::size_t groups = 3, n = 5, nk = 4, d = 8, heads = 2, dh = d / heads;
  Tensor q = g.tensor({groups, n, d}), k = g.tensor({groups, nk, d}), v = g.tensor({groups, nk, d});
  std::uint64_t macs = 0;
  Tensor fused = ad::scaled_dot_product_attention(q, k, v, heads, &macs);
  CHECK(macs == groups * n * nk * d);

  auto split = [&](const Tensor& t, std::size_t len) {
    return ad::reshape(ad::permute(ad::reshape(t, {groups, len, heads, dh}), {0, 2, 1, 3}), {groups * heads, len, dh});
  };
  auto composed = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
    Tensor w = ad::softmax(ad::scale(ad::batched_matmul(split(qq, n), split(kk, nk), true), 1.0 / std::sqrt(dh)), 2);
    Tensor o = ad::batched_matmul(w, split(vv, nk));
    return ad::reshape(ad::permute(ad::reshape(o, {groups, heads, n, dh}), {0, 2, 1, 3}), {groups, n, d});
  };
  Tensor ref = composed(q, k, v);
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(fused.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));

  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::scaled_dot_product_attention(t, k, v, heads), 42); }, q);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::scaled_dot_product_attention(q, t, v, heads), 43); }, k);
  require_grad_ok([&](const Tensor& t) { return probe_sum(ad::scaled_dot_product_attention(q, k, t, heads), 44); }, v);
}

TEST_CASE("backward") {
  SUBCASE("d/dx x^2 at 3") {
    Tensor x = Tensor::scalar(3.0, true);
    ad::mul(x, x).backward();
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("fan-out accumulates") {
    Tensor x = Tensor::scalar(1.5, true);
    ad::add(x, x).backward();
    CHECK(x.grad()[0] == 2.0);
  }
  SUBCASE("diamond graph visits each node once") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = ad::mul(x, x);            // 4
    Tensor z = ad::add(ad::scale(y, 3.0), y);  // 4y
    ad::mul(z, y).backward();            // 4y^2 = 4x^4 -> 16x^3 = 128
    CHECK(x.grad()[0] == doctest::Approx(128.0));
  }
  SUBCASE("leaves accumulate across passes until cleared") {
    Tensor x = Tensor::scalar(1.0, true);
    ad::scale(x, 2.0).backward();
    ad::scale(x, 2.0).backward();
    CHECK(x.grad()[0] == 4.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
  }
  SUBCASE("non-scalar loss is rejected") { CHECK_THROWS_AS(Tensor::zeros({2}, true).backward(), ShapeError); }
  SUBCASE("no-grad mode records nothing") {
    Tensor x = Tensor::scalar(1.0, true);
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::scale(x, 2.0).requires_grad());
  }
}

TEST_CASE("non-finite results are errors") {
  CHECK_THROWS_AS(ad::scale(Tensor::scalar(1e308), 10.0), NumericError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ad::add(Tensor::scalar(nan), Tensor::scalar(1.0)), NumericError);
}

TEST_CASE("grad_check") {
  Gen g(45);
  SUBCASE("sum has an all-ones gradient") {
    Tensor x = g.tensor({4, 3});
    auto r = ad::grad_check([](const Tensor& t) { return ad::sum(t); }, x);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-10);
  }
  SUBCASE("sum of gelu") {
    auto r = ad::grad_check([](const Tensor& t) { return ad::sum(ad::gelu(t)); }, g.tensor({10}, -2, 2));
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("softmax and matmul chain") {
    Tensor w = g.tensor({5, 3});
    auto r = ad::grad_check(
        [&](const Tensor& t) { return probe_sum(ad::matmul(ad::softmax(t, 1), w), 46); }, g.tensor({4, 5}));
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("a wrong gradient is reported") {
    // Forward is x^2 but the backward rule claims 3x.
    auto bad = [](const Tensor& t) {
      ad::Buffer v;
      for (double x : t.values()) v.push_back(x * x);
      Tensor out = Tensor::make_result("bad", t.shape(), v, {t}, [t](std::span<const double>, std::span<const double> gr) {
        auto d = t.mutable_grad();
        for (std::size_t i = 0; i < gr.size(); ++i) d[i] += 3.0 * t.values()[i] * gr[i];
      });
      return ad::sum(out);
    };
    CHECK_FALSE(ad::grad_check(bad, g.tensor({3}, 0.5, 1.0)).passed);
  }
  SUBCASE("NaN gradients fail") {
    auto nan_grad = [](const Tensor& t) {
      Tensor out = Tensor::make_result("nan", {}, {t.values()[0]}, {t}, [t](std::span<const double>, std::span<const double>) {
        t.mutable_grad()[0] += std::numeric_limits<double>::quiet_NaN();
      });
      return out;
    };
    auto r = ad::grad_check(nan_grad, Tensor({1}, {0.3}));
    CHECK(r.non_finite);
    CHECK_FALSE(r.passed);
  }
}

TEST_CASE("forward ops are deterministic") {
  Gen g1(47), g2(47);
  Tensor a = g1.tensor({2, 8, 8}), b = g2.tensor({2, 8, 8});
  Tensor k = Gen(48).tensor({3, 2, 3, 3});
  auto y1 = ad::gelu(ad::conv2d(a, k, 1, 1));
  auto y2 = ad::gelu(ad::conv2d(b, k, 1, 1));
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.values()[i] == y2.values()[i]);
}
