// SPDX-License-Identifier: Apache-2.0

#include "vbp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "vbp/error.hpp"
#include "vbp/rng.hpp"

namespace vbp {

LatencyResult bench_latency(const ModelSpec& spec, const WeightStore& weights,
                            size_t batch_size, int warmup, int runs, uint64_t seed) {
  spec.validate();
  if (runs < 5) throw UsageError("latency benchmarking needs runs >= 5");
  if (warmup < 0) throw UsageError("warmup must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");

  const size_t rows = spec.patch_embed ? spec.num_tokens - 1 : spec.num_tokens;
  const size_t feat = spec.patch_embed ? spec.patch_embed->in_features : spec.embed_dim();
  Tensor batch({batch_size, rows, feat});
  Rng rng = Rng::stream(seed, "bench-batch");
  for (float& v : batch.data) v = static_cast<float>(rng.gaussian());

  for (int i = 0; i < warmup; ++i) forward_model(spec, weights, batch);

  std::vector<double> ms(runs);
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor out = forward_model(spec, weights, batch);
    const auto t1 = std::chrono::steady_clock::now();
    // keep the pass observable
    volatile float sink = out.data[0];
    (void)sink;
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  auto pct = [&](double p) {
    size_t idx = static_cast<size_t>(p * (ms.size() - 1) + 0.5);
    return ms[std::min(idx, ms.size() - 1)];
  };
  return {pct(0.5), pct(0.1), pct(0.9)};
}

std::vector<VarDistRow> export_variance_distribution(const StatsReport& report) {
  std::vector<VarDistRow> rows;
  for (size_t l = 0; l < report.layers.size(); ++l) {
    std::vector<double> vars = report.layers[l].variance;
    std::sort(vars.begin(), vars.end());
    double total = 0.0;
    for (double v : vars) total += v;
    double running = 0.0;
    for (size_t r = 0; r < vars.size(); ++r) {
      running += vars[r];
      const double frac = total > 0.0 ? running / total
                                      : static_cast<double>(r + 1) / static_cast<double>(vars.size());
      rows.push_back({l, r, vars[r], frac});
    }
  }
  return rows;
}

std::vector<SweepRow> sweep(const ModelSpec& spec, const WeightStore& weights,
                            const StatsReport& stats, const std::vector<double>& rates,
                            const Dataset& eval_ds, const Dataset* train_ds,
                            const SweepOptions& options) {
  spec.validate();
  for (size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] > 0.0 && rates[i] < 1.0)) throw UsageError("sweep rates must lie in (0,1)");
    if (i > 0 && rates[i] <= rates[i - 1]) throw UsageError("sweep rates must be ascending");
  }
  if (options.finetune && !train_ds) throw UsageError("fine-tuned sweep needs a training dataset");

  std::vector<NeuronScore> scores;
  if (options.criterion == "variance") {
    scores = score_variance(stats, spec);
  } else if (options.criterion == "magnitude") {
    scores = score_magnitude(spec, weights);
  } else if (options.criterion == "random") {
    scores = score_random(spec, options.criterion_seed);
  } else {
    throw UsageError("sweep criterion must be variance, magnitude, or random");
  }

  const train::EvalResult dense = train::evaluate(spec, weights, eval_ds);

  std::vector<SweepRow> rows;
  for (double rate : rates) {
    PruningPlan plan = global_select(scores, spec, rate, options.min_keep);
    plan.criterion = options.criterion;
    plan.tap = stats.tap;
    ApplyResult pruned = apply_plan(spec, weights, plan, stats, options.mode);

    SweepRow row;
    row.rate = rate;
    row.macs = count_macs(pruned.spec);
    row.params = count_params(pruned.spec);
    const train::EvalResult ev = train::evaluate(pruned.spec, pruned.weights, eval_ds);
    row.retention = dense.top1 > 0.0 ? ev.top1 / dense.top1 : 0.0;

    if (options.finetune) {
      train::Teacher teacher{&spec, &weights};
      auto ft = train::finetune(pruned.spec, pruned.weights,
                                options.finetune->kd.enabled
                                    ? std::optional<train::Teacher>(teacher)
                                    : std::nullopt,
                                *train_ds, eval_ds, *options.finetune);
      row.final_top1 = train::evaluate(pruned.spec, ft.weights, eval_ds).top1;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vbp
