// SPDX-License-Identifier: Apache-2.0

#include "vbp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "vbp/error.hpp"

namespace vbp {

namespace {

std::atomic<int> g_max_threads{1};

size_t product(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

void validate_shape(const std::vector<size_t>& s, size_t data_len) {
  if (s.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (size_t d : s) {
    if (d == 0) throw DimensionError("tensor dimensions must be >= 1");
  }
  if (product(s) != data_len) {
    std::ostringstream os;
    os << "tensor data length " << data_len << " does not match shape product " << product(s);
    throw DimensionError(os.str());
  }
}

}  // namespace

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be >= 1");
  }
  data.assign(product(shape), 0.0f);
}

Tensor::Tensor(std::vector<size_t> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  validate_shape(shape, data.size());
}

size_t Tensor::numel() const { return data.size(); }

size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("expected 2-d tensor, got " + shape_str());
  return shape[0];
}

size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("expected 2-d tensor, got " + shape_str());
  return shape[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }
int max_threads() { return g_max_threads.load(); }

namespace {

// k-panel length over which f32 accumulators run before being folded into
// the per-row f64 accumulators.
constexpr size_t kPanel = 256;

// C[m,n] += A[m,k] * B[k,n], B row-major. Rows of C are independent, so the
// optional thread split is over i and bit-deterministic.
void gemm(const float* a, size_t m, size_t k, const float* b, size_t n, float* c) {
  auto rows_job = [&](size_t i0, size_t i1) {
    constexpr size_t MR = 4;  // A-row block; improves B-row reuse in L1
    std::vector<float> acc32(MR * n);
    std::vector<double> acc64(MR * n);
    for (size_t i = i0; i < i1; i += MR) {
      const size_t mr = std::min(MR, i1 - i);
      std::fill(acc64.begin(), acc64.begin() + mr * n, 0.0);
      for (size_t k0 = 0; k0 < k; k0 += kPanel) {
        const size_t k1 = std::min(k, k0 + kPanel);
        std::fill(acc32.begin(), acc32.begin() + mr * n, 0.0f);
        for (size_t kk = k0; kk < k1; ++kk) {
          const float* __restrict__ brow = b + kk * n;
          for (size_t r = 0; r < mr; ++r) {
            const float av = a[(i + r) * k + kk];
            float* __restrict__ acc = acc32.data() + r * n;
            for (size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
          }
        }
        for (size_t r = 0; r < mr; ++r) {
          float* s = acc32.data() + r * n;
          double* d = acc64.data() + r * n;
          for (size_t j = 0; j < n; ++j) d[j] += s[j];
        }
      }
      for (size_t r = 0; r < mr; ++r) {
        float* crow = c + (i + r) * n;
        const double* d = acc64.data() + r * n;
        for (size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(d[j]);
      }
    }
  };

  const int want = max_threads();
  if (want <= 1 || m < 8 || m * k * n < (1u << 21)) {
    rows_job(0, m);
    return;
  }
  const size_t nthreads = std::min<size_t>(want, m);
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  const size_t chunk = (m + nthreads - 1) / nthreads;
  for (size_t t = 0; t < nthreads; ++t) {
    const size_t i0 = t * chunk;
    const size_t i1 = std::min(m, i0 + chunk);
    if (i0 >= i1) break;
    pool.emplace_back(rows_job, i0, i1);
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor c({a.rows(), b.cols()});
  gemm(a.data.data(), a.rows(), a.cols(), b.data.data(), b.cols(), c.data.data());
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& w) {
  if (a.ndim() != 2 || w.ndim() != 2 || a.cols() != w.cols()) {
    throw DimensionError("matmul_nt shape mismatch: " + a.shape_str() + " x " + w.shape_str() + "^T");
  }
  return matmul(a, transpose(w));
}

Tensor transpose(const Tensor& a) {
  const size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (size_t i = 0; i < m; ++i) {
    const float* src = a.row(i);
    for (size_t j = 0; j < n; ++j) t.data[j * m + i] = src[j];
  }
  return t;
}

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;
}  // namespace

float gelu_scalar(float x) {
  const float u = static_cast<float>(kSqrt2OverPi) * (x + static_cast<float>(kGeluCubic) * x * x * x);
  return 0.5f * x * (1.0f + std::tanh(u));
}

double gelu_f64(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_f64(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) v = gelu_scalar(v);
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.ndim() != 2) throw DimensionError("layer_norm expects 2-d input, got " + x.shape_str());
  const size_t d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm gain/bias length mismatch: input " + x.shape_str() +
                         ", gain " + gain.shape_str() + ", bias " + bias.shape_str());
  }
  if (!(eps > 0.0f)) throw UsageError("layer_norm eps must be > 0");
  Tensor y({x.rows(), d});
  for (size_t i = 0; i < x.rows(); ++i) {
    const float* src = x.row(i);
    double sum = 0.0;
    for (size_t j = 0; j < d; ++j) sum += src[j];
    const double mean = sum / static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double c = src[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    float* dst = y.row(i);
    for (size_t j = 0; j < d; ++j) {
      const double xhat = (src[j] - mean) * inv;
      dst[j] = static_cast<float>(xhat * gain.data[j] + bias.data[j]);
    }
  }
  return y;
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("softmax expects 2-d input, got " + x.shape_str());
  Tensor y({x.rows(), x.cols()});
  const size_t d = x.cols();
  for (size_t i = 0; i < x.rows(); ++i) {
    const float* src = x.row(i);
    float mx = src[0];
    for (size_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    float* dst = y.row(i);
    for (size_t j = 0; j < d; ++j) {
      const float e = std::exp(src[j] - mx);
      dst[j] = e;
      sum += e;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void add_row_inplace(Tensor& a, std::span<const float> row) {
  if (a.cols() != row.size()) {
    throw DimensionError("row broadcast length mismatch: " + a.shape_str());
  }
  for (size_t i = 0; i < a.rows(); ++i) {
    float* dst = a.row(i);
    for (size_t j = 0; j < row.size(); ++j) dst[j] += row[j];
  }
}

}  // namespace vbp
