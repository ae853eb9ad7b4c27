// SPDX-License-Identifier: Apache-2.0
//
// Streaming per-neuron activation statistics. Accumulators run in float64 so
// that streaming results match a two-pass computation to ~1e-9 relative even
// for means around 1e6; merge() implements the pairwise combination used for
// sharded collection. The stats file is JSON with every float printed at 17
// significant digits, which round-trips exactly.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vbp/dataset.hpp"
#include "vbp/model.hpp"

namespace vbp {

struct WelfordAccumulator {
  uint64_t count = 0;
  std::vector<double> mean;
  std::vector<double> m2;  // sum of squared deviations, clamped at 0

  WelfordAccumulator() = default;
  explicit WelfordAccumulator(size_t width) : mean(width, 0.0), m2(width, 0.0) {}

  size_t width() const { return mean.size(); }
  void update(std::span<const float> h);
  void update(const Tensor& h);
};

WelfordAccumulator merge(const WelfordAccumulator& a, const WelfordAccumulator& b);

struct Moments {
  uint64_t count = 0;
  std::vector<double> mean;
  std::vector<double> variance;  // sample variance, m2/(N-1)
};

// InsufficientSamplesError below two samples.
Moments finalize(const WelfordAccumulator& acc);

struct LayerStats {
  std::string name;  // block.<i>.mlp
  uint64_t count = 0;
  std::vector<double> mean;
  std::vector<double> variance;
};

struct StatsReport {
  std::string model_fingerprint;
  std::string tap;  // "pre" | "post"
  std::vector<LayerStats> layers;
};

// Runs the model over the dataset in inference mode and accumulates one
// sample per token row per MLP layer. `threads` > 1 shards the dataset into
// contiguous partitions joined with merge(); results are deterministic for a
// fixed thread count.
StatsReport collect(const ModelSpec& spec, const WeightStore& weights, const Dataset& ds,
                    const std::string& tap, const std::string& model_fingerprint,
                    int threads = 1);

// Both tap locations from a single pass over the data.
std::pair<StatsReport, StatsReport> collect_both(const ModelSpec& spec,
                                                 const WeightStore& weights,
                                                 const Dataset& ds,
                                                 const std::string& model_fingerprint,
                                                 int threads = 1);

std::string serialize_stats(const StatsReport& report);
StatsReport parse_stats(std::string_view bytes);
std::string save_stats_file(const StatsReport& report, const std::string& path);
struct LoadedStats {
  StatsReport report;
  std::string fingerprint;
};
LoadedStats load_stats_file(const std::string& path);

// Raw activation traces for selected neurons, for distribution histograms.
struct NeuronRef {
  size_t layer = 0;
  size_t neuron = 0;
};

struct NeuronTrace {
  NeuronRef ref;
  std::vector<float> pre;
  std::vector<float> post;
};

std::vector<NeuronTrace> collect_traces(const ModelSpec& spec, const WeightStore& weights,
                                        const Dataset& ds, std::span<const NeuronRef> selection);

struct HistogramRow {
  size_t layer = 0;
  size_t neuron = 0;
  std::string tap;  // "pre" | "post"
  size_t bin = 0;
  double lo = 0.0, hi = 0.0;
  uint64_t count = 0;
};

// Per neuron, pre and post histograms share identical bin edges (auto range
// spans both series); counts sum to the observation count per series.
std::vector<HistogramRow> histogram_rows(std::span<const NeuronTrace> traces, int bins,
                                         bool auto_range, double lo = 0.0, double hi = 0.0);

}  // namespace vbp
