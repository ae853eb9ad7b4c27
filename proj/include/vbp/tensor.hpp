// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense numeric core: row-major float32 tensors plus the handful of
// ops the toy models need. Storage is 32-bit; reductions accumulate in
// float64 (the matmul kernel accumulates f32 inside short k-panels and f64
// across panels). No strided views: slicing copies.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vbp {

struct Tensor {
  std::vector<size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s);                      // zero-filled
  Tensor(std::vector<size_t> s, std::vector<float> d);         // validated

  size_t ndim() const { return shape.size(); }
  size_t numel() const;

  // 2-d accessors; DimensionError when the tensor is not 2-d.
  size_t rows() const;
  size_t cols() const;
  float* row(size_t i) { return data.data() + i * cols(); }
  const float* row(size_t i) const { return data.data() + i * cols(); }
  float& at(size_t i, size_t j) { return data[i * cols() + j]; }
  float at(size_t i, size_t j) const { return data[i * cols() + j]; }

  std::string shape_str() const;  // e.g. "[8x8]"
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// c[i,j] = sum_t a[i,t] * b[t,j]
Tensor matmul(const Tensor& a, const Tensor& b);

// a[m,k] * transpose(w[n,k]) -> [m,n]; the layout used by weight matrices
// whose rows are output neurons.
Tensor matmul_nt(const Tensor& a, const Tensor& w);

Tensor transpose(const Tensor& a);

// Elementwise tanh-approximation GELU.
Tensor gelu(const Tensor& x);
float gelu_scalar(float x);
double gelu_f64(double x);
double gelu_grad_f64(double x);

// Per-row zero-mean/unit-variance normalization then affine transform.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

// Per-row exponential normalization with max subtraction.
Tensor softmax(const Tensor& x);

void add_inplace(Tensor& a, const Tensor& b);
void add_row_inplace(Tensor& a, std::span<const float> row);  // broadcast

// Row-partitioned matmul parallelism. Partitioning is per-row, so results
// are bit-identical for every thread count. Default 1.
void set_max_threads(int n);
int max_threads();

}  // namespace vbp
