// SPDX-License-Identifier: Apache-2.0
//
// Wall-clock latency measurement (median over timed forward passes, fixed
// random batch, warmup discarded) plus the data exports behind the variance
// distribution and pruning-rate sensitivity figures.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vbp/compensate.hpp"
#include "vbp/dataset.hpp"
#include "vbp/model.hpp"
#include "vbp/prune.hpp"
#include "vbp/stats.hpp"
#include "vbp/train.hpp"

namespace vbp {

struct LatencyResult {
  double median_ms = 0.0;
  double p10_ms = 0.0;
  double p90_ms = 0.0;
};

// runs >= 5. Single-threaded unless the caller raised the tensor thread cap.
LatencyResult bench_latency(const ModelSpec& spec, const WeightStore& weights,
                            size_t batch_size, int warmup, int runs, uint64_t seed = 0);

struct VarDistRow {
  size_t layer = 0;
  size_t neuron_rank = 0;  // ascending variance within the layer
  double variance = 0.0;
  double cumulative_fraction = 0.0;  // share of the layer's total variance
};

std::vector<VarDistRow> export_variance_distribution(const StatsReport& report);

struct SweepRow {
  double rate = 0.0;
  uint64_t macs = 0;
  uint64_t params = 0;
  double retention = 0.0;             // top1(pruned)/top1(dense)
  std::optional<double> final_top1;   // absolute, after fine-tuning
};

struct SweepOptions {
  std::string criterion = "variance";
  ShiftMode mode = ShiftMode::shift;
  uint64_t criterion_seed = 0;  // random criterion
  size_t min_keep = 1;
  // When set, each pruned model is fine-tuned on train_ds (teacher = dense
  // model when kd is enabled) and final_top1 is reported.
  std::optional<train::FinetuneConfig> finetune;
};

// One pipeline run per rate, all from the same stats report. `eval_ds` drives
// retention; `train_ds` is only used when fine-tuning is requested.
std::vector<SweepRow> sweep(const ModelSpec& spec, const WeightStore& weights,
                            const StatsReport& stats, const std::vector<double>& rates,
                            const Dataset& eval_ds, const Dataset* train_ds,
                            const SweepOptions& options);

}  // namespace vbp
