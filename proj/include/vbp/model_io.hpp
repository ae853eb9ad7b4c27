// SPDX-License-Identifier: Apache-2.0
//
// VBPM model files: magic "VBPM1\n", an 8-byte little-endian manifest length,
// a UTF-8 JSON manifest {spec, tensors:[{name, shape, offset, nbytes}...]},
// then raw little-endian float32 blobs in manifest order. Tensor offsets are
// relative to the data section, which starts at the next 64-byte boundary
// after the manifest; every tensor offset is itself 64-byte aligned, so
// absolute positions are aligned too. Round-trips are bit-exact.
#pragma once

#include <iosfwd>
#include <string>
#include <utility>

#include "vbp/model.hpp"

namespace vbp {

std::string serialize_model(const ModelSpec& spec, const WeightStore& weights);
std::pair<ModelSpec, WeightStore> parse_model(std::string_view bytes);

struct LoadedModel {
  ModelSpec spec;
  WeightStore weights;
  std::string fingerprint;  // of the file bytes
};

// Atomic write; returns the file fingerprint.
std::string save_model_file(const ModelSpec& spec, const WeightStore& weights,
                            const std::string& path);
LoadedModel load_model_file(const std::string& path);

// JSON spec fragment shared with other manifests.
std::string spec_to_json(const ModelSpec& spec);

}  // namespace vbp
