// SPDX-License-Identifier: Apache-2.0

#include "vbp/compensate.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"

namespace vbp {

ShiftMode parse_shift_mode(const std::string& s) {
  if (s == "shift") return ShiftMode::shift;
  if (s == "no-shift") return ShiftMode::no_shift;
  throw UsageError("mode must be 'shift' or 'no-shift', got '" + s + "'");
}

Tensor build_delta_mu(std::span<const size_t> pruned, std::span<const double> mean) {
  Tensor out({mean.size()});
  for (size_t idx : pruned) {
    if (idx >= mean.size()) {
      throw PlanError("pruned index " + std::to_string(idx) + " out of range for width " +
                      std::to_string(mean.size()));
    }
    out.data[idx] = static_cast<float>(mean[idx]);
  }
  return out;
}

Tensor shift_bias(const Tensor& b2, const Tensor& w2, const Tensor& delta_mu) {
  if (w2.ndim() != 2 || b2.numel() != w2.rows() || delta_mu.numel() != w2.cols()) {
    throw DimensionError("shift_bias shape mismatch: b2 " + b2.shape_str() + ", w2 " +
                         w2.shape_str() + ", delta_mu " + delta_mu.shape_str());
  }
  Tensor out = b2;
  for (size_t i = 0; i < w2.rows(); ++i) {
    double acc = 0.0;
    const float* row = w2.row(i);
    for (size_t j = 0; j < w2.cols(); ++j) {
      acc += static_cast<double>(row[j]) * static_cast<double>(delta_mu.data[j]);
    }
    out.data[i] = static_cast<float>(static_cast<double>(out.data[i]) + acc);
  }
  return out;
}

namespace {

std::set<size_t> checked_index_set(std::span<const size_t> pruned, size_t d_hid) {
  std::set<size_t> s;
  for (size_t idx : pruned) {
    if (idx >= d_hid) {
      throw PlanError("pruned index " + std::to_string(idx) + " out of range for d_hid " +
                      std::to_string(d_hid));
    }
    if (!s.insert(idx).second) throw PlanError("duplicate pruned index " + std::to_string(idx));
  }
  if (s.size() >= d_hid) throw PlanError("cannot prune every hidden neuron of a layer");
  return s;
}

}  // namespace

CompactedMlp compact(const Tensor& w1, const Tensor& b1, const Tensor& w2,
                     std::span<const size_t> pruned) {
  const size_t d_hid = w1.rows();
  if (b1.numel() != d_hid || w2.cols() != d_hid) {
    throw DimensionError("compact shape mismatch: w1 " + w1.shape_str() + ", b1 " +
                         b1.shape_str() + ", w2 " + w2.shape_str());
  }
  const std::set<size_t> drop = checked_index_set(pruned, d_hid);
  const size_t kept = d_hid - drop.size();

  CompactedMlp out;
  out.w1 = Tensor({kept, w1.cols()});
  out.b1 = Tensor({kept});
  out.w2 = Tensor({w2.rows(), kept});
  size_t r = 0;
  for (size_t i = 0; i < d_hid; ++i) {
    if (drop.count(i)) continue;
    std::copy_n(w1.row(i), w1.cols(), out.w1.row(r));
    out.b1.data[r] = b1.data[i];
    for (size_t o = 0; o < w2.rows(); ++o) out.w2.at(o, r) = w2.at(o, i);
    r += 1;
  }
  return out;
}

ApplyResult apply_plan(const ModelSpec& spec, const WeightStore& weights,
                       const PruningPlan& plan, const StatsReport& stats, ShiftMode mode,
                       const std::string& model_fingerprint,
                       const std::string& stats_fingerprint,
                       const std::string& plan_fingerprint) {
  spec.validate();
  weights.validate(spec);
  if (plan.layers.size() != spec.blocks.size()) {
    throw PlanError("plan covers " + std::to_string(plan.layers.size()) + " layers, model has " +
                    std::to_string(spec.blocks.size()));
  }
  if (!model_fingerprint.empty() && stats.model_fingerprint != model_fingerprint) {
    throw IntegrityError("stats were collected from model " + stats.model_fingerprint +
                         ", not from " + model_fingerprint);
  }
  if (!stats_fingerprint.empty() && !plan.stats_fingerprint.empty() &&
      plan.stats_fingerprint != stats_fingerprint) {
    throw IntegrityError("plan was built from stats " + plan.stats_fingerprint +
                         ", but compensation was given stats " + stats_fingerprint);
  }
  if (mode == ShiftMode::shift && stats.tap != "post") {
    throw IntegrityError("mean-shift compensation requires post-activation statistics, got tap=" +
                         stats.tap);
  }
  if (stats.layers.size() != spec.blocks.size()) {
    throw IntegrityError("stats do not cover the model's MLP layers");
  }

  ApplyResult result;
  result.spec = prune_shape(spec, plan.layers);
  result.record.plan_fingerprint = plan_fingerprint;
  result.record.mode = mode == ShiftMode::shift ? "shift" : "no-shift";

  WeightStore out = weights;
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    const std::string p = "block." + std::to_string(l) + ".mlp.";
    const LayerStats& ls = stats.layers[l];
    if (ls.mean.size() != spec.blocks[l].mlp.d_hid) {
      throw IntegrityError("stats width does not match layer " + std::to_string(l));
    }
    const Tensor& w1 = weights.get(p + "w1");
    const Tensor& b1 = weights.get(p + "b1");
    const Tensor& w2 = weights.get(p + "w2");
    const Tensor& b2 = weights.get(p + "b2");

    CompensationRecord::Layer rec;
    rec.name = "block." + std::to_string(l) + ".mlp";
    rec.pruned.assign(plan.layers[l].begin(), plan.layers[l].end());
    std::sort(rec.pruned.begin(), rec.pruned.end());

    Tensor new_b2 = b2;
    if (mode == ShiftMode::shift) {
      rec.delta_mu = build_delta_mu(plan.layers[l], ls.mean);
      new_b2 = shift_bias(b2, w2, rec.delta_mu);
      rec.bias_shift = Tensor({b2.numel()});
      for (size_t i = 0; i < b2.numel(); ++i) rec.bias_shift.data[i] = new_b2.data[i] - b2.data[i];
    } else {
      rec.delta_mu = Tensor({ls.mean.size()});
      rec.bias_shift = Tensor({b2.numel()});
    }

    CompactedMlp c = compact(w1, b1, w2, plan.layers[l]);
    out.put(p + "w1", std::move(c.w1));
    out.put(p + "b1", std::move(c.b1));
    out.put(p + "w2", std::move(c.w2));
    out.put(p + "b2", std::move(new_b2));
    result.record.layers.push_back(std::move(rec));
  }
  out.validate(result.spec);
  result.weights = std::move(out);
  return result;
}

namespace {

void append_f32_array(std::string& out, const Tensor& t) {
  out += '[';
  char buf[32];
  for (size_t i = 0; i < t.numel(); ++i) {
    if (i) out += ',';
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(t.data[i]));
    out += buf;
  }
  out += ']';
}

}  // namespace

std::string serialize_record(const CompensationRecord& record) {
  std::string out = "{\"plan_fingerprint\":\"" + record.plan_fingerprint + "\",\"mode\":\"" +
                    record.mode + "\",\"layers\":[";
  for (size_t l = 0; l < record.layers.size(); ++l) {
    const auto& rec = record.layers[l];
    if (l) out += ',';
    out += "{\"name\":\"" + rec.name + "\",\"pruned\":[";
    for (size_t i = 0; i < rec.pruned.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(rec.pruned[i]);
    }
    out += "],\"delta_mu\":";
    append_f32_array(out, rec.delta_mu);
    out += ",\"bias_shift\":";
    append_f32_array(out, rec.bias_shift);
    out += '}';
  }
  out += "]}";
  return out;
}

std::string save_record_file(const CompensationRecord& record, const std::string& path) {
  const std::string bytes = serialize_record(record);
  write_file_atomic(path, bytes);
  return fingerprint_bytes(bytes);
}

}  // namespace vbp
