// SPDX-License-Identifier: Apache-2.0

#include "vbp/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"
#include "vbp/rng.hpp"
#include "vbp/train.hpp"

namespace vbp {

using json = nlohmann::ordered_json;

size_t PruningPlan::total_pruned() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

namespace {

void check_finite(const std::vector<NeuronScore>& scores) {
  for (const NeuronScore& s : scores) {
    if (!std::isfinite(s.score)) {
      throw NumericError("non-finite score for neuron " + std::to_string(s.layer) + ":" +
                         std::to_string(s.neuron));
    }
  }
}

}  // namespace

std::vector<NeuronScore> score_variance(const StatsReport& report, const ModelSpec& spec) {
  spec.validate();
  if (report.layers.size() != spec.blocks.size()) {
    throw IntegrityError("stats cover " + std::to_string(report.layers.size()) +
                         " layers, model has " + std::to_string(spec.blocks.size()));
  }
  std::vector<NeuronScore> scores;
  for (size_t l = 0; l < report.layers.size(); ++l) {
    const LayerStats& ls = report.layers[l];
    const std::string expect = "block." + std::to_string(l) + ".mlp";
    if (ls.name != expect) {
      throw IntegrityError("stats layer " + ls.name + " does not match model layer " + expect);
    }
    if (ls.variance.size() != spec.blocks[l].mlp.d_hid) {
      throw IntegrityError("stats width " + std::to_string(ls.variance.size()) +
                           " does not match d_hid of " + expect);
    }
    for (size_t i = 0; i < ls.variance.size(); ++i) {
      scores.push_back({l, i, ls.variance[i]});
    }
  }
  check_finite(scores);
  return scores;
}

std::vector<NeuronScore> score_magnitude(const ModelSpec& spec, const WeightStore& weights) {
  spec.validate();
  std::vector<NeuronScore> scores;
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    const std::string p = "block." + std::to_string(l) + ".mlp.";
    const Tensor& w1 = weights.get(p + "w1");
    const Tensor& b1 = weights.get(p + "b1");
    for (size_t i = 0; i < w1.rows(); ++i) {
      double s = std::abs(static_cast<double>(b1.data[i]));
      const float* row = w1.row(i);
      for (size_t j = 0; j < w1.cols(); ++j) s += std::abs(static_cast<double>(row[j]));
      scores.push_back({l, i, s});
    }
  }
  check_finite(scores);
  return scores;
}

std::vector<NeuronScore> score_snip(const ModelSpec& spec, const WeightStore& weights,
                                    const Dataset& ds, int batches, int batch_size) {
  spec.validate();
  if (ds.size() == 0) throw UsageError("snip scoring needs a labeled dataset");
  if (batches < 1) throw UsageError("snip batches must be >= 1");
  if (batch_size < 1) throw UsageError("snip batch_size must be >= 1");

  train::ParamMap params = train::to_params(spec, weights);
  std::vector<double> acc;  // one slot per (layer, neuron), layer-major
  std::vector<size_t> offsets(spec.blocks.size() + 1, 0);
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    offsets[l + 1] = offsets[l] + spec.blocks[l].mlp.d_hid;
  }
  acc.assign(offsets.back(), 0.0);

  train::KdConfig no_kd;
  for (int b = 0; b < batches; ++b) {
    const size_t from = static_cast<size_t>(b) * batch_size;
    if (from >= ds.size()) break;
    const size_t to = std::min(ds.size(), from + batch_size);
    std::vector<size_t> idx(to - from);
    std::iota(idx.begin(), idx.end(), from);
    train::ParamMap grads;
    train::loss_and_grads(spec, params, ds, idx, nullptr, no_kd, &grads);
    for (size_t l = 0; l < spec.blocks.size(); ++l) {
      const std::string p = "block." + std::to_string(l) + ".mlp.";
      const train::Mat& w1 = params.at(p + "w1");
      const train::Mat& gw1 = grads.at(p + "w1");
      const train::Mat& b1 = params.at(p + "b1");
      const train::Mat& gb1 = grads.at(p + "b1");
      for (size_t i = 0; i < w1.rows; ++i) {
        double s = std::abs(b1.d[i] * gb1.d[i]);
        for (size_t j = 0; j < w1.cols; ++j) s += std::abs(w1.at(i, j) * gw1.at(i, j));
        acc[offsets[l] + i] += s;
      }
    }
  }

  std::vector<NeuronScore> scores;
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    for (size_t i = 0; i < spec.blocks[l].mlp.d_hid; ++i) {
      scores.push_back({l, i, acc[offsets[l] + i]});
    }
  }
  check_finite(scores);
  return scores;
}

std::vector<NeuronScore> score_random(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng = Rng::stream(seed, "random-criterion");
  std::vector<NeuronScore> scores;
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    for (size_t i = 0; i < spec.blocks[l].mlp.d_hid; ++i) {
      scores.push_back({l, i, rng.uniform()});
    }
  }
  return scores;
}

PruningPlan global_select(const std::vector<NeuronScore>& scores, const ModelSpec& spec,
                          double rate, size_t min_keep) {
  spec.validate();
  if (!(rate > 0.0 && rate < 1.0)) throw UsageError("pruning rate must be in (0,1)");
  if (min_keep < 1) throw UsageError("min_keep must be >= 1");
  check_finite(scores);

  size_t total = 0;
  for (const BlockShape& b : spec.blocks) total += b.mlp.d_hid;
  std::vector<char> seen(total, 0);
  std::vector<size_t> offsets(spec.blocks.size() + 1, 0);
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    offsets[l + 1] = offsets[l] + spec.blocks[l].mlp.d_hid;
  }
  for (const NeuronScore& s : scores) {
    if (s.layer >= spec.blocks.size() || s.neuron >= spec.blocks[s.layer].mlp.d_hid) {
      throw IntegrityError("score for out-of-range neuron " + std::to_string(s.layer) + ":" +
                           std::to_string(s.neuron));
    }
    char& flag = seen[offsets[s.layer] + s.neuron];
    if (flag) throw IntegrityError("duplicate score for neuron " + std::to_string(s.layer) + ":" +
                                   std::to_string(s.neuron));
    flag = 1;
  }
  if (scores.size() != total) {
    throw IntegrityError("scores cover " + std::to_string(scores.size()) + " of " +
                         std::to_string(total) + " hidden neurons");
  }

  std::vector<const NeuronScore*> order;
  order.reserve(scores.size());
  for (const NeuronScore& s : scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const NeuronScore* a, const NeuronScore* b) {
    if (a->score != b->score) return a->score < b->score;
    if (a->layer != b->layer) return a->layer < b->layer;
    return a->neuron < b->neuron;
  });

  const size_t budget = static_cast<size_t>(std::floor(rate * static_cast<double>(total)));
  PruningPlan plan;
  plan.rate = rate;
  plan.min_keep = min_keep;
  plan.layers.assign(spec.blocks.size(), {});
  std::vector<size_t> remaining;
  for (const BlockShape& b : spec.blocks) remaining.push_back(b.mlp.d_hid);

  size_t taken = 0;
  for (const NeuronScore* s : order) {
    if (taken == budget) break;
    if (remaining[s->layer] <= min_keep) continue;  // guard binds; next candidate steps in
    plan.layers[s->layer].push_back(s->neuron);
    remaining[s->layer] -= 1;
    taken += 1;
  }
  for (auto& l : plan.layers) std::sort(l.begin(), l.end());
  return plan;
}

ModelSpec prune_shape(const ModelSpec& spec, const PruningPlan& plan) {
  return prune_shape(spec, plan.layers);
}

std::vector<PlanSummaryRow> plan_summary(const PruningPlan& plan, const ModelSpec& spec) {
  spec.validate();
  if (plan.layers.size() != spec.blocks.size()) {
    throw PlanError("plan does not cover the model's layers");
  }
  std::vector<PlanSummaryRow> rows;
  for (size_t l = 0; l < plan.layers.size(); ++l) {
    const size_t hid = spec.blocks[l].mlp.d_hid;
    const size_t pruned = plan.layers[l].size();
    rows.push_back({l, hid, pruned, static_cast<double>(pruned) / static_cast<double>(hid)});
  }
  return rows;
}

std::string serialize_plan(const PruningPlan& plan) {
  char rate[32];
  std::snprintf(rate, sizeof(rate), "%.17g", plan.rate);
  std::string out = "{\"criterion\":\"" + plan.criterion + "\",\"rate\":" + rate +
                    ",\"tap\":\"" + plan.tap + "\",\"min_keep\":" + std::to_string(plan.min_keep);
  if (plan.seed) out += ",\"seed\":" + std::to_string(*plan.seed);
  out += ",\"stats_fingerprint\":\"" + plan.stats_fingerprint + "\",\"layers\":[";
  for (size_t l = 0; l < plan.layers.size(); ++l) {
    if (l) out += ',';
    out += "{\"name\":\"block." + std::to_string(l) + ".mlp\",\"pruned\":[";
    for (size_t i = 0; i < plan.layers[l].size(); ++i) {
      if (i) out += ',';
      out += std::to_string(plan.layers[l][i]);
    }
    out += "]}";
  }
  out += "]}";
  return out;
}

PruningPlan parse_plan(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("plan file is not valid JSON: ") + e.what());
  }
  PruningPlan plan;
  try {
    plan.criterion = j.at("criterion").get<std::string>();
    plan.rate = j.at("rate").get<double>();
    plan.tap = j.at("tap").get<std::string>();
    plan.min_keep = j.at("min_keep").get<size_t>();
    if (j.contains("seed")) plan.seed = j.at("seed").get<uint64_t>();
    plan.stats_fingerprint = j.at("stats_fingerprint").get<std::string>();
    for (const auto& jl : j.at("layers")) {
      plan.layers.push_back(jl.at("pruned").get<std::vector<size_t>>());
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad plan file: ") + e.what());
  }
  return plan;
}

std::string save_plan_file(const PruningPlan& plan, const std::string& path) {
  const std::string bytes = serialize_plan(plan);
  write_file_atomic(path, bytes);
  return fingerprint_bytes(bytes);
}

LoadedPlan load_plan_file(const std::string& path) {
  const std::string bytes = read_file(path);
  return {parse_plan(bytes), fingerprint_bytes(bytes)};
}

}  // namespace vbp
