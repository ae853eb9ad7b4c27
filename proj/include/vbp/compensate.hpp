// SPDX-License-Identifier: Apache-2.0
//
// Mean-shift compensation and weight compaction. Pruned neurons' mean
// activations are folded into the downstream bias (b2' = b2 + W2 * delta_mu)
// before the corresponding rows of W1/b1 and columns of W2 are dropped.
// Compensation consumes post-activation means only; feeding it pre-activation
// statistics is an integrity error, not a silent fallback.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "vbp/model.hpp"
#include "vbp/prune.hpp"
#include "vbp/stats.hpp"

namespace vbp {

enum class ShiftMode { shift, no_shift };
ShiftMode parse_shift_mode(const std::string& s);  // "shift" | "no-shift"

// Sparse-support vector: delta_mu[j] = mean[j] for pruned j, else 0.
Tensor build_delta_mu(std::span<const size_t> pruned, std::span<const double> mean);

// b2 + W2 * delta_mu.
Tensor shift_bias(const Tensor& b2, const Tensor& w2, const Tensor& delta_mu);

struct CompactedMlp {
  Tensor w1, b1, w2;
};

// Drops rows `pruned` of w1/b1 and columns `pruned` of w2; survivors keep
// their relative order and exact bytes.
CompactedMlp compact(const Tensor& w1, const Tensor& b1, const Tensor& w2,
                     std::span<const size_t> pruned);

struct CompensationRecord {
  std::string plan_fingerprint;
  std::string mode;  // "shift" | "no-shift"
  struct Layer {
    std::string name;
    std::vector<size_t> pruned;
    Tensor delta_mu;    // full d_hid width, zero outside the pruned set
    Tensor bias_shift;  // d_out
  };
  std::vector<Layer> layers;
};

struct ApplyResult {
  ModelSpec spec;
  WeightStore weights;
  CompensationRecord record;
};

// Full per-layer application: (shift) build_delta_mu -> shift_bias -> compact,
// or compact only. Verifies the fingerprint chain: stats must come from
// `model_fingerprint`, and when the plan records a stats fingerprint it must
// match `stats_fingerprint` (pass empty strings to skip a link, e.g. for
// in-memory pipelines).
ApplyResult apply_plan(const ModelSpec& spec, const WeightStore& weights,
                       const PruningPlan& plan, const StatsReport& stats, ShiftMode mode,
                       const std::string& model_fingerprint = "",
                       const std::string& stats_fingerprint = "",
                       const std::string& plan_fingerprint = "");

std::string serialize_record(const CompensationRecord& record);
std::string save_record_file(const CompensationRecord& record, const std::string& path);

}  // namespace vbp
