// SPDX-License-Identifier: Apache-2.0
//
// One-shot structured scoring and global bottom-p% selection over the union
// of all MLP hidden neurons. Ties order by (score, layer, neuron) ascending,
// so plans are byte-identical across runs and platforms.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vbp/dataset.hpp"
#include "vbp/model.hpp"
#include "vbp/stats.hpp"

namespace vbp {

struct NeuronScore {
  size_t layer = 0;
  size_t neuron = 0;
  double score = 0.0;
};

struct PruningPlan {
  std::string criterion;  // variance | magnitude | snip | random
  double rate = 0.0;
  std::string tap = "post";  // tap the scores came from
  size_t min_keep = 1;
  std::optional<uint64_t> seed;  // random criterion only
  std::string stats_fingerprint;
  std::vector<std::vector<size_t>> layers;  // ascending pruned indices per block

  size_t total_pruned() const;
};

// Scores equal reported variances. IntegrityError when the report does not
// cover the model's MLP layers exactly.
std::vector<NeuronScore> score_variance(const StatsReport& report, const ModelSpec& spec);

// Fan-in L1: sum_j |w1[i,j]| + |b1[i]|.
std::vector<NeuronScore> score_magnitude(const ModelSpec& spec, const WeightStore& weights);

// Saliency |w * dL/dw| aggregated over the fan-in of each hidden neuron,
// summed over the first `batches` batches of the labeled dataset under
// cross-entropy loss.
std::vector<NeuronScore> score_snip(const ModelSpec& spec, const WeightStore& weights,
                                    const Dataset& ds, int batches, int batch_size = 32);

// Seeded uniform scores; the control criterion for ablations.
std::vector<NeuronScore> score_random(const ModelSpec& spec, uint64_t seed);

// Selects floor(rate * total) smallest scores globally. Layers never drop
// below min_keep survivors; displaced victims are replaced by the next
// smallest candidates.
PruningPlan global_select(const std::vector<NeuronScore>& scores, const ModelSpec& spec,
                          double rate, size_t min_keep = 1);

ModelSpec prune_shape(const ModelSpec& spec, const PruningPlan& plan);

struct PlanSummaryRow {
  size_t layer = 0;
  size_t d_hid = 0;
  size_t pruned = 0;
  double fraction = 0.0;
};
std::vector<PlanSummaryRow> plan_summary(const PruningPlan& plan, const ModelSpec& spec);

std::string serialize_plan(const PruningPlan& plan);
PruningPlan parse_plan(std::string_view bytes);
std::string save_plan_file(const PruningPlan& plan, const std::string& path);
struct LoadedPlan {
  PruningPlan plan;
  std::string fingerprint;
};
LoadedPlan load_plan_file(const std::string& path);

}  // namespace vbp
