// SPDX-License-Identifier: Apache-2.0
//
// Deterministic splittable RNG. All randomness in the toolkit flows from one
// user seed; named substreams are derived by hashing (seed, label) so that
// adding a consumer never perturbs existing streams. The generator is
// splitmix64, which is platform-independent; gaussians use Box-Muller so no
// libstdc++ distribution internals leak into the artifacts.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vbp {

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  static Rng stream(uint64_t seed, std::string_view label) {
    uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(label.data(), label.size(), h);
    return Rng(h);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; one draw consumes two uniforms.
  double gaussian() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Normal truncated to [-2, 2] sigma, then scaled.
  double truncated_gaussian(double stddev) {
    double z = gaussian();
    while (z < -2.0 || z > 2.0) z = gaussian();
    return z * stddev;
  }

 private:
  uint64_t state_;
};

}  // namespace vbp
