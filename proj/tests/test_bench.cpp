// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vbp/bench.hpp"
#include "vbp/dataset.hpp"
#include "vbp/error.hpp"
#include "vbp/model.hpp"
#include "vbp/rng.hpp"

using namespace vbp;

namespace {

StatsReport report_with_variances(const std::vector<double>& vars) {
  StatsReport r;
  r.tap = "post";
  LayerStats ls;
  ls.name = "block.0.mlp";
  ls.count = 10;
  ls.variance = vars;
  ls.mean.assign(vars.size(), 0.0);
  r.layers.push_back(ls);
  return r;
}

}  // namespace

TEST_CASE("latency of a model against itself is a speedup near 1") {
  // big enough that a pass takes a few milliseconds
  ModelSpec spec;
  for (int i = 0; i < 2; ++i) spec.blocks.push_back({64, 4, {64, 256, 64}});
  spec.num_tokens = 32;
  spec.num_classes = 10;
  WeightStore ws = init_weights(spec, 7);
  const LatencyResult a = bench_latency(spec, ws, 4, 2, 9, 0);
  const LatencyResult b = bench_latency(spec, ws, 4, 2, 9, 0);
  const double speedup = a.median_ms / b.median_ms;
  CHECK(speedup >= 0.9);
  CHECK(speedup <= 1.1);
  CHECK(a.p10_ms <= a.median_ms);
  CHECK(a.median_ms <= a.p90_ms);
}

TEST_CASE("warmup does not change the median much") {
  ModelSpec spec;
  spec.blocks.push_back({64, 4, {64, 256, 64}});
  spec.num_tokens = 32;
  spec.num_classes = 10;
  WeightStore ws = init_weights(spec, 7);
  const LatencyResult cold = bench_latency(spec, ws, 4, 0, 15, 0);
  const LatencyResult warm = bench_latency(spec, ws, 4, 5, 15, 0);
  CHECK(std::abs(cold.median_ms - warm.median_ms) / warm.median_ms < 0.2);
}

TEST_CASE("bench_latency validates its arguments") {
  ModelSpec spec = preset_spec("toy");
  WeightStore ws = init_weights(spec, 1);
  CHECK_THROWS_AS(bench_latency(spec, ws, 1, 0, 4, 0), UsageError);
  CHECK_THROWS_AS(bench_latency(spec, ws, 0, 0, 5, 0), UsageError);
}

TEST_CASE("variance distribution export") {
  // equal variances: cumulative fraction is linear in rank
  auto rows = export_variance_distribution(report_with_variances({2, 2, 2, 2}));
  REQUIRE(rows.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].cumulative_fraction == doctest::Approx((i + 1) / 4.0));
  }
  CHECK(rows.back().cumulative_fraction == doctest::Approx(1.0).epsilon(1e-9));

  // one dominant neuron: cumulative share stays tiny until the last rank
  auto dom = export_variance_distribution(report_with_variances({1e-6, 2e-6, 3e-6, 100.0}));
  CHECK(dom[2].cumulative_fraction < 1e-6);
  CHECK(dom[3].cumulative_fraction == doctest::Approx(1.0).epsilon(1e-9));

  // long-tailed variances: bottom 60% of neurons hold far less than 60%
  Rng rng(11);
  std::vector<double> lognormal(200);
  for (double& v : lognormal) v = std::exp(3.0 * rng.gaussian());
  auto ln = export_variance_distribution(report_with_variances(lognormal));
  const size_t idx60 = static_cast<size_t>(0.6 * 200) - 1;
  CHECK(ln[idx60].cumulative_fraction < 0.2);

  // variances come back sorted ascending with ranks attached
  for (size_t i = 1; i < ln.size(); ++i) {
    CHECK(ln[i].variance >= ln[i - 1].variance);
    CHECK(ln[i].neuron_rank == i);
  }
}

TEST_CASE("sweep rows are internally consistent with accounting") {
  ModelSpec spec = preset_spec("toy");
  WeightStore ws = init_weights(spec, 15);
  Dataset ds = gen_data(96, 9, 32, 4, 21, 2.5);
  Dataset train_ds = ds.slice(0, 64);
  Dataset eval_ds = ds.slice(64, 32);
  StatsReport stats = collect(spec, ws, train_ds, "post", "");

  SweepOptions opt;
  const std::vector<double> rates = {0.05, 0.3, 0.6};
  auto rows = sweep(spec, ws, stats, rates, eval_ds, nullptr, opt);
  REQUIRE(rows.size() == 3);
  for (size_t i = 0; i < rows.size(); ++i) {
    auto scores = score_variance(stats, spec);
    PruningPlan plan = global_select(scores, spec, rates[i], 1);
    ModelSpec cut = prune_shape(spec, plan);
    CHECK(rows[i].macs == count_macs(cut));
    CHECK(rows[i].params == count_params(cut));
    CHECK_FALSE(rows[i].final_top1.has_value());
  }

  // the smallest rate matches a single manual pipeline run exactly
  auto scores = score_variance(stats, spec);
  PruningPlan plan = global_select(scores, spec, 0.05, 1);
  plan.criterion = "variance";
  plan.tap = "post";
  ApplyResult manual = apply_plan(spec, ws, plan, stats, ShiftMode::shift);
  const double dense_top1 = train::evaluate(spec, ws, eval_ds).top1;
  const double manual_ret = train::evaluate(manual.spec, manual.weights, eval_ds).top1 / dense_top1;
  CHECK(rows[0].retention == manual_ret);

  CHECK_THROWS_AS(sweep(spec, ws, stats, {0.5, 0.2}, eval_ds, nullptr, opt), UsageError);
  CHECK_THROWS_AS(sweep(spec, ws, stats, {0.0}, eval_ds, nullptr, opt), UsageError);
}
