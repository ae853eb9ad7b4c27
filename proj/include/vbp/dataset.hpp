// SPDX-License-Identifier: Apache-2.0
//
// Pre-tokenized synthetic datasets and the VBPD container: magic "VBPD1\n",
// 8-byte little-endian manifest length, JSON manifest
// {samples, tokens, dim, classes}, then per sample tokens*dim little-endian
// float32 features followed by a 32-bit little-endian label.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbp/tensor.hpp"

namespace vbp {

struct Dataset {
  size_t tokens = 0;
  size_t dim = 0;
  size_t classes = 0;
  std::vector<Tensor> features;  // each [tokens, dim]
  std::vector<uint32_t> labels;

  size_t size() const { return features.size(); }
  Dataset slice(size_t skip, size_t take) const;
  void validate() const;
};

// Per-class Gaussian token templates scaled by `separation`, plus unit noise.
// Labels are balanced round-robin. Deterministic per seed.
Dataset gen_data(size_t samples, size_t tokens, size_t dim, size_t classes, uint64_t seed,
                 double separation);

// [count, tokens, dim] batch of consecutive samples starting at `start`.
Tensor batch_features(const Dataset& ds, size_t start, size_t count);

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::string_view bytes);
std::string save_dataset_file(const Dataset& ds, const std::string& path);  // fingerprint

struct LoadedDataset {
  Dataset data;
  std::string fingerprint;
};
LoadedDataset load_dataset_file(const std::string& path);

}  // namespace vbp
