// SPDX-License-Identifier: Apache-2.0

#include "vbp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include <json.hpp>

#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"

namespace vbp {

using json = nlohmann::ordered_json;

void WelfordAccumulator::update(std::span<const float> h) {
  if (h.size() != width()) {
    throw DimensionError("accumulator width " + std::to_string(width()) +
                         " does not match sample width " + std::to_string(h.size()));
  }
  count += 1;
  const double inv = 1.0 / static_cast<double>(count);
  for (size_t i = 0; i < h.size(); ++i) {
    const double x = static_cast<double>(h[i]);
    const double d0 = x - mean[i];
    mean[i] += d0 * inv;
    const double d1 = x - mean[i];
    m2[i] += d0 * d1;
    if (m2[i] < 0.0) m2[i] = 0.0;  // absorb -1e-12-scale rounding
  }
}

void WelfordAccumulator::update(const Tensor& h) {
  update(std::span<const float>(h.data.data(), h.data.size()));
}

WelfordAccumulator merge(const WelfordAccumulator& a, const WelfordAccumulator& b) {
  if (a.width() != b.width()) {
    throw DimensionError("cannot merge accumulators of widths " + std::to_string(a.width()) +
                         " and " + std::to_string(b.width()));
  }
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  WelfordAccumulator out(a.width());
  out.count = a.count + b.count;
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  const double n = na + nb;
  for (size_t i = 0; i < a.width(); ++i) {
    const double delta = b.mean[i] - a.mean[i];
    out.mean[i] = a.mean[i] + delta * (nb / n);
    out.m2[i] = a.m2[i] + b.m2[i] + delta * delta * (na * nb / n);
    if (out.m2[i] < 0.0) out.m2[i] = 0.0;
  }
  return out;
}

Moments finalize(const WelfordAccumulator& acc) {
  if (acc.count < 2) {
    throw InsufficientSamplesError("variance undefined for " + std::to_string(acc.count) +
                                   " samples (need >= 2)");
  }
  Moments m;
  m.count = acc.count;
  m.mean = acc.mean;
  m.variance.resize(acc.width());
  const double denom = static_cast<double>(acc.count - 1);
  for (size_t i = 0; i < acc.width(); ++i) m.variance[i] = acc.m2[i] / denom;
  return m;
}

namespace {

struct AccTap : MlpTap {
  std::vector<WelfordAccumulator>* pre;
  std::vector<WelfordAccumulator>* post;
  void on_hidden(size_t layer, std::span<const float> p, std::span<const float> q) override {
    (*pre)[layer].update(p);
    (*post)[layer].update(q);
  }
};

struct ShardResult {
  std::vector<WelfordAccumulator> pre, post;
};

void run_shard(const ModelSpec& spec, const WeightStore& weights, const Dataset& ds,
               size_t from, size_t to, ShardResult* out) {
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    out->pre.emplace_back(spec.blocks[l].mlp.d_hid);
    out->post.emplace_back(spec.blocks[l].mlp.d_hid);
  }
  AccTap tap;
  tap.pre = &out->pre;
  tap.post = &out->post;
  constexpr size_t kBatch = 32;
  for (size_t s = from; s < to; s += kBatch) {
    const size_t n = std::min(kBatch, to - s);
    forward_model(spec, weights, batch_features(ds, s, n), &tap);
  }
}

StatsReport report_from(const std::vector<WelfordAccumulator>& accs, const ModelSpec& spec,
                        const std::string& tap, const std::string& fp) {
  StatsReport r;
  r.model_fingerprint = fp;
  r.tap = tap;
  for (size_t l = 0; l < accs.size(); ++l) {
    Moments m = finalize(accs[l]);
    LayerStats ls;
    ls.name = "block." + std::to_string(l) + ".mlp";
    ls.count = m.count;
    ls.mean = std::move(m.mean);
    ls.variance = std::move(m.variance);
    for (double v : ls.variance) {
      if (!std::isfinite(v)) throw NumericError("non-finite variance in layer " + ls.name);
    }
    r.layers.push_back(std::move(ls));
  }
  return r;
}

}  // namespace

std::pair<StatsReport, StatsReport> collect_both(const ModelSpec& spec,
                                                 const WeightStore& weights, const Dataset& ds,
                                                 const std::string& model_fingerprint,
                                                 int threads) {
  spec.validate();
  if (ds.size() == 0) throw InsufficientSamplesError("cannot collect statistics from an empty dataset");
  const size_t nshards = std::max<size_t>(1, std::min<size_t>(threads, ds.size()));
  std::vector<ShardResult> shards(nshards);
  if (nshards == 1) {
    run_shard(spec, weights, ds, 0, ds.size(), &shards[0]);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (ds.size() + nshards - 1) / nshards;
    for (size_t t = 0; t < nshards; ++t) {
      const size_t from = t * chunk;
      const size_t to = std::min(ds.size(), from + chunk);
      if (from >= to) break;
      pool.emplace_back(run_shard, std::cref(spec), std::cref(weights), std::cref(ds), from, to,
                        &shards[t]);
    }
    for (auto& th : pool) th.join();
  }
  std::vector<WelfordAccumulator> pre = std::move(shards[0].pre);
  std::vector<WelfordAccumulator> post = std::move(shards[0].post);
  for (size_t t = 1; t < nshards; ++t) {
    if (shards[t].pre.empty()) continue;
    for (size_t l = 0; l < pre.size(); ++l) {
      pre[l] = merge(pre[l], shards[t].pre[l]);
      post[l] = merge(post[l], shards[t].post[l]);
    }
  }
  return {report_from(pre, spec, "pre", model_fingerprint),
          report_from(post, spec, "post", model_fingerprint)};
}

StatsReport collect(const ModelSpec& spec, const WeightStore& weights, const Dataset& ds,
                    const std::string& tap, const std::string& model_fingerprint, int threads) {
  if (tap != "pre" && tap != "post") throw UsageError("tap must be 'pre' or 'post'");
  auto [pre, post] = collect_both(spec, weights, ds, model_fingerprint, threads);
  return tap == "pre" ? std::move(pre) : std::move(post);
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_array17(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt17(v[i]);
  }
  out += ']';
}

}  // namespace

std::string serialize_stats(const StatsReport& report) {
  std::string out = "{\"model_fingerprint\":\"" + report.model_fingerprint + "\",\"tap\":\"" +
                    report.tap + "\",\"layers\":[";
  for (size_t l = 0; l < report.layers.size(); ++l) {
    const LayerStats& ls = report.layers[l];
    if (l) out += ',';
    out += "{\"name\":\"" + ls.name + "\",\"count\":" + std::to_string(ls.count) + ",\"mean\":";
    append_array17(out, ls.mean);
    out += ",\"variance\":";
    append_array17(out, ls.variance);
    out += '}';
  }
  out += "]}";
  return out;
}

StatsReport parse_stats(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("stats file is not valid JSON: ") + e.what());
  }
  StatsReport r;
  try {
    r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    r.tap = j.at("tap").get<std::string>();
    for (const auto& jl : j.at("layers")) {
      LayerStats ls;
      ls.name = jl.at("name").get<std::string>();
      ls.count = jl.at("count").get<uint64_t>();
      ls.mean = jl.at("mean").get<std::vector<double>>();
      ls.variance = jl.at("variance").get<std::vector<double>>();
      if (ls.mean.size() != ls.variance.size()) {
        throw ManifestError("stats layer " + ls.name + " mean/variance widths differ");
      }
      r.layers.push_back(std::move(ls));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad stats file: ") + e.what());
  }
  if (r.tap != "pre" && r.tap != "post") throw ManifestError("stats tap must be 'pre' or 'post'");
  return r;
}

std::string save_stats_file(const StatsReport& report, const std::string& path) {
  const std::string bytes = serialize_stats(report);
  write_file_atomic(path, bytes);
  return fingerprint_bytes(bytes);
}

LoadedStats load_stats_file(const std::string& path) {
  const std::string bytes = read_file(path);
  return {parse_stats(bytes), fingerprint_bytes(bytes)};
}

namespace {

struct TraceTap : MlpTap {
  std::vector<NeuronTrace>* traces;
  void on_hidden(size_t layer, std::span<const float> pre, std::span<const float> post) override {
    for (NeuronTrace& t : *traces) {
      if (t.ref.layer == layer) {
        t.pre.push_back(pre[t.ref.neuron]);
        t.post.push_back(post[t.ref.neuron]);
      }
    }
  }
};

}  // namespace

std::vector<NeuronTrace> collect_traces(const ModelSpec& spec, const WeightStore& weights,
                                        const Dataset& ds, std::span<const NeuronRef> selection) {
  if (selection.empty()) throw UsageError("neuron selection is empty");
  spec.validate();
  for (const NeuronRef& ref : selection) {
    if (ref.layer >= spec.blocks.size() || ref.neuron >= spec.blocks[ref.layer].mlp.d_hid) {
      throw UsageError("selected neuron " + std::to_string(ref.layer) + ":" +
                       std::to_string(ref.neuron) + " out of range");
    }
  }
  std::vector<NeuronTrace> traces;
  for (const NeuronRef& ref : selection) traces.push_back({ref, {}, {}});
  TraceTap tap;
  tap.traces = &traces;
  constexpr size_t kBatch = 32;
  for (size_t s = 0; s < ds.size(); s += kBatch) {
    const size_t n = std::min(kBatch, ds.size() - s);
    forward_model(spec, weights, batch_features(ds, s, n), &tap);
  }
  return traces;
}

std::vector<HistogramRow> histogram_rows(std::span<const NeuronTrace> traces, int bins,
                                         bool auto_range, double lo, double hi) {
  if (traces.empty()) throw UsageError("neuron selection is empty");
  if (bins < 1) throw UsageError("bins must be >= 1");
  std::vector<HistogramRow> rows;
  for (const NeuronTrace& t : traces) {
    double rlo = lo, rhi = hi;
    if (auto_range) {
      rlo = std::numeric_limits<double>::infinity();
      rhi = -std::numeric_limits<double>::infinity();
      for (float v : t.pre) {
        rlo = std::min(rlo, static_cast<double>(v));
        rhi = std::max(rhi, static_cast<double>(v));
      }
      for (float v : t.post) {
        rlo = std::min(rlo, static_cast<double>(v));
        rhi = std::max(rhi, static_cast<double>(v));
      }
      if (!(rlo <= rhi)) throw UsageError("no observations recorded for histogram");
    }
    if (rhi <= rlo) rhi = rlo + 1.0;  // degenerate constant series
    const double width = (rhi - rlo) / bins;
    auto emit = [&](const std::vector<float>& vals, const char* tapname) {
      std::vector<uint64_t> counts(bins, 0);
      for (float vf : vals) {
        const double v = vf;
        int b = static_cast<int>((v - rlo) / width);
        if (b < 0) b = 0;
        if (b >= bins) b = bins - 1;  // right edge closed
        counts[b] += 1;
      }
      for (int b = 0; b < bins; ++b) {
        rows.push_back({t.ref.layer, t.ref.neuron, tapname, static_cast<size_t>(b),
                        rlo + b * width, rlo + (b + 1) * width, counts[b]});
      }
    };
    emit(t.pre, "pre");
    emit(t.post, "post");
  }
  return rows;
}

}  // namespace vbp
