// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <vector>

#include "stpt/error.hpp"
#include "stpt/gradcheck.hpp"
#include "stpt/losses.hpp"
#include "stpt/ops.hpp"
#include "stpt/parallel.hpp"
#include "stpt/rng.hpp"
#include "stpt/tensor.hpp"
#include "stpt/tensor_io.hpp"
#include "oracles.hpp"

using namespace stpt;
using oracle::max_abs_diff;
using oracle::random_clip;

namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (auto& v : m.storage()) v = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("linear: identity, zero input and matmul oracle") {
  Rng rng(1);
  const Matrix<double> x = random_matrix(5, 4, rng);
  const Matrix<double> y = linear(x, Linear<double>::identity(4));
  CHECK(max_abs_diff(y.data(), x.data()) == 0.0);

  Linear<double> b(3, 2);
  b.bias = {0.5, -2.0};
  const Matrix<double> z = linear(Matrix<double>(4, 3), b);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(z.at(r, 0) == 0.5);
    CHECK(z.at(r, 1) == -2.0);
  }

  const Matrix<double> a = random_matrix(4, 3, rng);
  Rng wr(7);
  const Linear<double> w = Linear<double>::random(3, 2, wr);
  const Matrix<double> out = linear(a, w);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      long double acc = w.bias[o];
      for (std::size_t i = 0; i < 3; ++i) acc += static_cast<long double>(a.at(r, i)) * w.w(o, i);
      CHECK(static_cast<double>(acc) == doctest::Approx(out.at(r, o)).epsilon(1e-6));
    }
}

TEST_CASE("linear: column mismatch is a shape error") {
  CHECK_THROWS_AS(linear(Matrix<double>(2, 3), Linear<double>::identity(4)), ShapeError);
}

TEST_CASE("layer_norm examples") {
  const std::vector<double> g2 = {1, 1}, b2 = {0, 0};
  Matrix<double> c(1, 4, 3.25);
  const std::vector<double> g4(4, 1.0), b4(4, 0.0);
  const auto zc = layer_norm<double>(c, g4, b4);
  for (double v : zc.data()) CHECK(v == 0.0);

  const Matrix<double> pm(1, 2, std::vector<double>{1.0, -1.0});
  const Matrix<double> y = layer_norm<double>(pm, g2, b2, 1e-300);
  CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  Rng rng(3);
  const Matrix<double> x = random_matrix(3, 7, rng, 4.0);
  std::vector<double> gamma(7), beta(7);
  for (std::size_t i = 0; i < 7; ++i) {
    gamma[i] = 0.5 + 0.1 * static_cast<double>(i);
    beta[i] = -0.2 * static_cast<double>(i);
  }
  const Matrix<double> n = layer_norm<double>(x, gamma, beta);
  for (std::size_t r = 0; r < 3; ++r) {
    long double mean = 0, var = 0;
    for (double v : x.row(r)) mean += v;
    mean /= 7;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= 7;
    for (std::size_t i = 0; i < 7; ++i) {
      const long double ref = (x.at(r, i) - mean) / std::sqrt(var + 1e-5L) * gamma[i] + beta[i];
      CHECK(n.at(r, i) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    }
  }
}

TEST_CASE("layer_norm property: per-token shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<float> x = random_matrix(4, 16, rng, 3.0).cast<float>();
    Matrix<float> shifted = x;
    for (std::size_t r = 0; r < 4; ++r) {
      const float c = static_cast<float>(rng.uniform(-50.0, 50.0));
      for (auto& v : shifted.row(r)) v += c;
    }
    const std::vector<float> g(16, 1.0f), b(16, 0.0f);
    const auto a = layer_norm<float>(x, g, b), s = layer_norm<float>(shifted, g, b);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - s.data()[i]) < 1e-5f);
  }
}

TEST_CASE("gelu examples") {
  CHECK(gelu(0.0) == 0.0);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-8.0, 8.0);
    // x*Phi(x) + x*Phi(-x) = x, i.e. gelu(x) - gelu(-x) = x.
    CHECK(gelu(x) - gelu(-x) == doctest::Approx(x).epsilon(1e-12));
  }
  // Phi(1) = 0.5 * erfc(-1/sqrt 2) from long double erfc.
  const long double phi1 = 0.5L * std::erfc(-1.0L / std::sqrt(2.0L));
  CHECK(std::abs(gelu(1.0) - static_cast<double>(phi1)) < 1e-7);
  CHECK(std::abs(gelu(1.0) - 0.8413447460685429) < 1e-7);
}

TEST_CASE("softmax examples and properties") {
  Matrix<double> u(1, 5, 2.5);
  const auto su = softmax(u);
  for (double v : su.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  const Matrix<double> l(1, 2, std::vector<double>{0.0, std::log(2.0)});
  const auto s = softmax(l);
  CHECK(s.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double mag = trial % 2 == 0 ? 1.0 : 1e4;
    const Matrix<double> x = random_matrix(3, 9, rng, mag);
    Matrix<double> xs = x;
    const double c = rng.uniform(-100.0, 100.0);
    for (auto& v : xs.storage()) v += c;
    const auto a = softmax(x), b = softmax(xs);
    const auto af = softmax(x.cast<float>());
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0, sumf = 0.0;
      for (std::size_t k = 0; k < 9; ++k) {
        CHECK(a.at(r, k) >= 0.0);
        sum += a.at(r, k);
        sumf += af.at(r, k);
        CHECK(std::abs(a.at(r, k) - b.at(r, k)) < 1e-12);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      CHECK(std::abs(sumf - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("conv3d: impulse, zero input and naive oracle") {
  Clip<double> impulse({5, 5, 5, 1});
  impulse.at(2, 2, 2, 0) = 1.0;
  Rng rng(2);
  const auto k = Conv3D<double>::random(1, 1, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 1, rng);
  const auto y = conv3d(impulse, k);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        // Cross-correlation: output at centre + offset picks the mirrored tap.
        CHECK(y.at(1 + a, 1 + b, 1 + c, 0) == k.weight[k.weight_index(0, 0, 2 - a, 2 - b, 2 - c)]);
  CHECK(y.at(0, 0, 0, 0) == 0.0);

  auto kb = Conv3D<double>::random(2, 3, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}, 1, rng);
  kb.bias = {0.25, -1.0, 3.0};
  const auto z = conv3d(Clip<double>({4, 4, 4, 2}), kb);
  for (std::size_t i = 0; i < z.tokens(); ++i) {
    CHECK(z.token(i)[0] == 0.25);
    CHECK(z.token(i)[1] == -1.0);
    CHECK(z.token(i)[2] == 3.0);
  }

  const auto x = random_clip({6, 6, 6, 2}, rng);
  auto dw = Conv3D<double>::random(2, 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 2, rng);
  dw.bias = {0.1, -0.3};
  CHECK(max_abs_diff(conv3d(x, dw).data(), oracle::conv(x, dw).data()) < 1e-12);

  for (const Extent3 stride : {Extent3{1, 1, 1}, Extent3{2, 2, 2}, Extent3{2, 4, 4}, Extent3{1, 2, 3}}) {
    const auto xs = random_clip({7, 9, 8, 4}, rng);
    const auto dense = Conv3D<double>::random(4, 6, {3, 7, 5}, stride, {1, 3, 2}, 1, rng);
    const auto grouped = Conv3D<double>::random(4, 4, {3, 3, 3}, stride, {1, 1, 1}, 2, rng);
    CHECK(max_abs_diff(conv3d(xs, dense).data(), oracle::conv(xs, dense).data()) < 1e-12);
    CHECK(max_abs_diff(conv3d(xs, grouped).data(), oracle::conv(xs, grouped).data()) < 1e-12);
  }
}

TEST_CASE("conv3d: geometry errors") {
  CHECK_THROWS_AS(Conv3D<double>(3, 4, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 2), ConfigError);
  const Conv3D<double> big(1, 1, {5, 5, 5}, {1, 1, 1}, {0, 0, 0});
  CHECK_THROWS_AS(conv3d(Clip<double>({3, 3, 3, 1}), big), ConfigError);
  const Conv3D<double> two(2, 2, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
  CHECK_THROWS_AS(conv3d(Clip<double>({3, 3, 3, 1}), two), ConfigError);
}

TEST_CASE("conv3d property: 1x1x1 dense kernel equals linear on tokens") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_clip({3, 4, 5, 6}, rng);
    const auto k = Conv3D<double>::random(6, 5, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1, rng);
    Linear<double> l(6, 5);
    for (std::size_t o = 0; o < 5; ++o) {
      for (std::size_t i = 0; i < 6; ++i) l.w(o, i) = k.weight[k.weight_index(o, i, 0, 0, 0)];
      l.bias[o] = k.bias[o];
    }
    const auto a = conv3d(x, k);
    const auto b = linear(x.to_matrix(), l);
    CHECK(max_abs_diff(a.data(), b.data()) < 1e-13);
  }
}

TEST_CASE("finite_diff_grad examples") {
  const std::vector<double> p = {1.0, 2.0};
  const auto g = finite_diff_grad([](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; }, p, 1e-5);
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);
  for (double v : finite_diff_grad([](std::span<const double>) { return 3.0; }, p)) CHECK(v == 0.0);
  CHECK_THROWS_AS(finite_diff_grad([](std::span<const double> v) { return v[1] > 2.0 ? NAN : 0.0; }, p), NumericError);

  // Focal loss of the losses module against its analytic gradient.
  Rng rng(13);
  const std::size_t anchors = 6, classes = 4;
  std::vector<double> logits(anchors * classes);
  for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
  std::vector<std::optional<std::size_t>> labels = {0, std::nullopt, 3, 1, std::nullopt, 2};
  const auto f = [&](std::span<const double> z) { return focal_loss(z, labels, classes, 2.0, 0.25).value; };
  const auto analytic = focal_loss(logits, labels, classes, 2.0, 0.25).grad;
  CHECK(relative_error(analytic, finite_diff_grad(f, logits)) < 1e-4);
}

TEST_CASE("Rng determinism and independence of streams") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  // Adding a stream never shifts another one.
  Rng parent(7);
  const auto first = parent.split("weights").next_u64();
  (void)parent.split("extra").next_u64();
  CHECK(parent.split("weights").next_u64() == first);
  CHECK(parent.split("weights").next_u64() != parent.split("input").next_u64());
  // FNV-1a 64 reference value for "a".
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);

  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.below(7) < 7);
    CHECK(std::abs(u.truncated_normal(0.02)) <= 0.04);
  }
}

TEST_CASE("Rng normal moments") {
  Rng r(99);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  Rng rng(21);
  const auto x = random_clip({6, 7, 5, 8}, rng).cast<float>();
  const auto k = Conv3D<double>::random(8, 8, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, 8, rng).cast<float>();
  Rng lr(22);
  const auto l = Linear<double>::random(8, 12, lr).cast<float>();
  set_thread_count(1);
  const auto c1 = conv3d(x, k);
  const auto l1 = linear(x.to_matrix(), l);
  set_thread_count(4);
  const auto c4 = conv3d(x, k);
  const auto l4 = linear(x.to_matrix(), l);
  set_thread_count(1);
  CHECK(std::memcmp(c1.data().data(), c4.data().data(), c1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(l1.data().data(), l4.data().data(), l1.size() * sizeof(float)) == 0);

  std::vector<int> hits(1000, 0);
  set_thread_count(3);
  parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hits[i];
  });
  set_thread_count(1);
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("tensor file: byte layout and round trip") {
  RawTensor t{DType::f32, {2, 1, 1, 3}, {1.0, -2.0, 0.5, 3.0, 4.0, -0.25}};
  std::ostringstream os;
  write_tensor(os, t);
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 4 * 8 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "STPT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 0);
  CHECK(static_cast<unsigned char>(bytes[7]) == 4);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  float second;
  std::memcpy(&second, bytes.data() + 8 + 32 + 4, 4);
  CHECK(second == -2.0f);

  std::istringstream is(bytes);
  const RawTensor back = read_tensor(is);
  CHECK(back.dtype == DType::f32);
  CHECK(back.shape == t.shape);
  CHECK(back.values == t.values);

  const auto clip = clip_from_raw<float>(back);
  CHECK(clip.dims() == ClipDims{2, 1, 1, 3});
  CHECK_THROWS_AS(clip_from_raw<double>(back), InputError);

  RawTensor d{DType::f64, {3}, {0.1, 0.2, 0.3}};
  const auto dir = std::filesystem::temp_directory_path() / "stpt_test_tensor_core";
  std::filesystem::create_directories(dir);
  save_tensor(dir / "d.stpt", d);
  CHECK(load_tensor(dir / "d.stpt").values == d.values);
  TensorBundle bundle{{{"a", t}, {"b", d}}};
  save_bundle(dir / "bundle", bundle);
  const auto lb = load_bundle(dir / "bundle");
  REQUIRE(lb.find("b") != nullptr);
  CHECK(lb.find("b")->values == d.values);
  CHECK(lb.find("missing") == nullptr);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tensor file: malformed input is an input error") {
  for (const std::string& bad : {std::string("XXXX"), std::string("STPT\x01"), std::string("STPT\x02\x00\x00\x01", 8),
                                std::string("STPT\x01\x00\x07\x01", 8),
                                std::string("STPT\x01\x00\x00\x01\x02\x00\x00\x00\x00\x00\x00\x00\x00", 17)}) {
    std::istringstream is(bad);
    CHECK_THROWS_AS(read_tensor(is), InputError);
  }
  CHECK_THROWS_AS(load_tensor("/nonexistent/file.stpt"), InputError);
}

TEST_CASE("clip and matrix shape checks") {
  CHECK_THROWS_AS(Clip<float>({0, 1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(Clip<float>({1, 1, 1, 2}, std::vector<float>{1.0f}), ShapeError);
  Clip<float> c({2, 3, 4, 5});
  c.at(1, 2, 3, 4) = 7.0f;
  CHECK(c.data().back() == 7.0f);
  auto m = std::move(c).to_matrix();
  CHECK(m.rows() == 24);
  CHECK_THROWS_AS(std::move(m).to_clip({2, 3, 5}), ShapeError);
}
