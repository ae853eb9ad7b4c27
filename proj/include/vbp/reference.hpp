// SPDX-License-Identifier: Apache-2.0
//
// Ground-truth forward pass for tests: straightforward double-precision
// loops, sharing no kernels with the fast path. Supports overwriting chosen
// hidden activations (post-nonlinearity) with fixed values, which is the
// dense mean-replacement formulation that compacted shift-mode models must
// reproduce.
#pragma once

#include <vector>

#include "vbp/model.hpp"

namespace vbp {
namespace reference {

struct MeanOverride {
  std::vector<size_t> indices;  // hidden neurons to overwrite
  std::vector<double> values;   // same length
};

// batch as in forward_model. `overrides`, when non-null, has one entry per
// block.
Tensor forward(const ModelSpec& spec, const WeightStore& weights, const Tensor& batch,
               const std::vector<MeanOverride>* overrides = nullptr);

}  // namespace reference
}  // namespace vbp
