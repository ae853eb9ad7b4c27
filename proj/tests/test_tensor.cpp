// SPDX-License-Identifier: Apache-2.0
//
// Tensor core tests. matmul is checked against a naive float64 triple-loop
// oracle; gelu against high-precision formula evaluations.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vbp/error.hpp"
#include "vbp/rng.hpp"
#include "vbp/tensor.hpp"

using namespace vbp;

namespace {

// Independent oracle: naive triple loop, float64 accumulation.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (size_t i = 0; i < a.rows(); ++i) {
    for (size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < a.cols(); ++t) {
        acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
      }
      c.at(i, j) = static_cast<float>(acc);
    }
  }
  return c;
}

Tensor random_matrix(size_t m, size_t n, Rng& rng) {
  Tensor t({m, n});
  for (float& v : t.data) v = static_cast<float>(rng.gaussian());
  return t;
}

void check_close(const Tensor& got, const Tensor& want, double tol) {
  REQUIRE(got.shape == want.shape);
  for (size_t i = 0; i < got.numel(); ++i) {
    const double g = got.data[i], w = want.data[i];
    CHECK(std::abs(g - w) <= tol * std::max(1.0, std::abs(w)));
  }
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({}, {}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), DimensionError);
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape_str() == "[2x3]");
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, eye);
  CHECK(c.data == std::vector<float>{1, 2, 3, 4});

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).data[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul matches naive oracle on random 8x8") {
  Rng rng(42);
  Tensor a = random_matrix(8, 8, rng);
  Tensor b = random_matrix(8, 8, rng);
  check_close(matmul(a, b), matmul_oracle(a, b), 1e-5);
}

TEST_CASE("matmul matches oracle for random shapes up to 64") {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    const size_t m = 1 + rng.below(64), k = 1 + rng.below(64), n = 1 + rng.below(64);
    Tensor a = random_matrix(m, k, rng);
    Tensor b = random_matrix(k, n, rng);
    check_close(matmul(a, b), matmul_oracle(a, b), 1e-5);
  }
}

TEST_CASE("matmul crosses the k-panel boundary correctly") {
  Rng rng(11);
  Tensor a = random_matrix(3, 700, rng);
  Tensor b = random_matrix(700, 5, rng);
  check_close(matmul(a, b), matmul_oracle(a, b), 1e-5);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}), b({4, 5});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul_nt equals oracle against transposed operand") {
  Rng rng(13);
  Tensor a = random_matrix(5, 17, rng);
  Tensor w = random_matrix(9, 17, rng);
  check_close(matmul_nt(a, w), matmul_oracle(a, transpose(w)), 1e-5);
}

TEST_CASE("matmul is deterministic across thread counts") {
  Rng rng(21);
  Tensor a = random_matrix(200, 80, rng);
  Tensor b = random_matrix(80, 160, rng);
  set_max_threads(1);
  Tensor c1 = matmul(a, b);
  set_max_threads(4);
  Tensor c4 = matmul(a, b);
  set_max_threads(1);
  CHECK(c1.data == c4.data);
}

TEST_CASE("gelu fixed points") {
  Tensor z({1}, {0.0f});
  CHECK(gelu(z).data[0] == 0.0f);

  // saturation on the far negative side
  const float g10 = gelu_scalar(-10.0f);
  CHECK(g10 <= 0.0f);
  CHECK(g10 > -0.2f);
  CHECK(std::abs(g10) <= 1e-4f);

  // high-precision evaluations of the tanh formula
  CHECK(gelu_scalar(1.0f) == doctest::Approx(0.8411919906082767).epsilon(1e-6));
  CHECK(gelu_scalar(2.0f) == doctest::Approx(1.9545976940877750).epsilon(1e-6));
}

TEST_CASE("gelu shape and monotonicity properties") {
  // Monotone non-decreasing right of the minimum (~ -0.752); on the left the
  // function rises back toward 0 but stays inside (-0.2, 0].
  float prev = gelu_scalar(-0.75f);
  for (int i = 1; i <= 10000; ++i) {
    const float x = -0.75f + 8.75f * static_cast<float>(i) / 10000.0f;
    const float g = gelu_scalar(x);
    CHECK(g >= prev);
    prev = g;
  }
  for (int i = 0; i <= 10000; ++i) {
    const float x = -8.0f + 7.25f * static_cast<float>(i) / 10000.0f;  // [-8, -0.75]
    const float g = gelu_scalar(x);
    CHECK(g <= 0.0f);
    CHECK(g > -0.2f);
  }
}

TEST_CASE("layer_norm basics") {
  Tensor gain({3}, {1, 1, 1});
  Tensor bias({3}, {0, 0, 0});
  Tensor ones({1, 3}, {1, 1, 1});
  Tensor out = layer_norm(ones, gain, bias, 1e-5f);
  for (float v : out.data) CHECK(std::abs(v) < 1e-3f);

  Tensor g2({2}, {1, 1}), b2({2}, {0, 0});
  Tensor pm({1, 2}, {-1, 1});
  Tensor out2 = layer_norm(pm, g2, b2, 1e-12f);
  CHECK(out2.data[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(out2.data[1] == doctest::Approx(1.0).epsilon(1e-5));

  CHECK_THROWS_AS(layer_norm(ones, g2, b2, 1e-5f), DimensionError);
  CHECK_THROWS_AS(layer_norm(ones, gain, bias, 0.0f), UsageError);
}

TEST_CASE("layer_norm output moments on random rows") {
  Rng rng(3);
  const size_t d = 64;
  Tensor gain({d}), bias({d});
  std::fill(gain.data.begin(), gain.data.end(), 1.0f);
  Tensor x({4, d});
  for (float& v : x.data) v = static_cast<float>(3.0 * rng.gaussian() + 2.0);
  Tensor y = layer_norm(x, gain, bias, 1e-5f);
  for (size_t i = 0; i < y.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (size_t j = 0; j < d; ++j) mean += y.at(i, j);
    mean /= d;
    for (size_t j = 0; j < d; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= d;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("softmax basics and properties") {
  Tensor x({1, 2}, {0, 0});
  Tensor y = softmax(x);
  CHECK(y.data[0] == doctest::Approx(0.5));
  CHECK(y.data[1] == doctest::Approx(0.5));

  Tensor big({1, 2}, {1000, 0});
  Tensor yb = softmax(big);
  CHECK(std::isfinite(yb.data[0]));
  CHECK(yb.data[0] == doctest::Approx(1.0));
  CHECK(yb.data[1] == doctest::Approx(0.0));

  Rng rng(9);
  Tensor r({16, 33});
  for (float& v : r.data) v = static_cast<float>(5.0 * rng.gaussian());
  Tensor yr = softmax(r);
  for (size_t i = 0; i < yr.rows(); ++i) {
    double sum = 0.0;
    for (size_t j = 0; j < yr.cols(); ++j) {
      CHECK(yr.at(i, j) >= 0.0f);
      sum += yr.at(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}
