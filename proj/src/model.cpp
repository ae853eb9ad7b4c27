// SPDX-License-Identifier: Apache-2.0

#include "vbp/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "vbp/error.hpp"
#include "vbp/rng.hpp"

namespace vbp {

void ModelSpec::validate() const {
  if (blocks.empty()) throw UsageError("model must have at least one block");
  if (num_tokens < 1) throw UsageError("num_tokens must be >= 1");
  if (num_classes < 1) throw UsageError("num_classes must be >= 1");
  const size_t embed = blocks[0].embed_dim;
  const bool attn = blocks[0].num_heads > 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const BlockShape& b = blocks[i];
    if (b.embed_dim != embed) throw UsageError("all blocks must share embed_dim");
    if ((b.num_heads > 0) != attn) {
      throw UsageError("cannot mix attention and MLP-only blocks in one model");
    }
    if (b.num_heads > 0 && b.embed_dim % b.num_heads != 0) {
      throw UsageError("embed_dim must be divisible by num_heads");
    }
    if (b.mlp.d_in < 1 || b.mlp.d_hid < 1 || b.mlp.d_out < 1) {
      throw UsageError("mlp dimensions must be >= 1");
    }
    if (attn && (b.mlp.d_in != embed || b.mlp.d_out != embed)) {
      throw UsageError("transformer blocks require mlp.d_in == mlp.d_out == embed_dim");
    }
    if (!attn && (b.mlp.d_in != embed || b.mlp.d_out != embed)) {
      throw UsageError("MLP-only blocks still map embed_dim to embed_dim");
    }
  }
  if (patch_embed) {
    if (patch_embed->in_features < 1) throw UsageError("patch_embed.in_features must be >= 1");
    if (num_tokens < 2) throw UsageError("patch_embed requires num_tokens >= 2 (class token + patches)");
  }
}

ModelSpec preset_spec(const std::string& name) {
  auto deit = [](size_t embed, size_t heads) {
    ModelSpec s;
    s.num_tokens = 197;  // 14x14 patches + class token
    s.num_classes = 1000;
    s.patch_embed = PatchEmbed{3 * 16 * 16};
    for (int i = 0; i < 12; ++i) {
      s.blocks.push_back({embed, heads, {embed, 4 * embed, embed}});
    }
    return s;
  };
  if (name == "deit-tiny") return deit(192, 3);
  if (name == "deit-small") return deit(384, 6);
  if (name == "deit-base") return deit(768, 12);
  if (name == "toy") {
    ModelSpec s;
    s.num_tokens = 9;
    s.num_classes = 4;
    for (int i = 0; i < 2; ++i) s.blocks.push_back({32, 4, {32, 128, 32}});
    return s;
  }
  throw UsageError("unknown preset: " + name);
}

std::vector<TensorSpec> required_weights(const ModelSpec& spec) {
  spec.validate();
  std::vector<TensorSpec> out;
  const size_t embed = spec.embed_dim();
  if (spec.patch_embed) {
    out.push_back({"patch_embed.weight", {embed, spec.patch_embed->in_features}});
    out.push_back({"patch_embed.bias", {embed}});
    out.push_back({"cls_token", {1, embed}});
    out.push_back({"pos_embed", {spec.num_tokens, embed}});
  }
  for (size_t i = 0; i < spec.blocks.size(); ++i) {
    const BlockShape& b = spec.blocks[i];
    const std::string p = "block." + std::to_string(i) + ".";
    if (b.num_heads > 0) {
      out.push_back({p + "ln1.gain", {embed}});
      out.push_back({p + "ln1.bias", {embed}});
      out.push_back({p + "attn.qkv.weight", {3 * embed, embed}});
      out.push_back({p + "attn.qkv.bias", {3 * embed}});
      out.push_back({p + "attn.proj.weight", {embed, embed}});
      out.push_back({p + "attn.proj.bias", {embed}});
      out.push_back({p + "ln2.gain", {embed}});
      out.push_back({p + "ln2.bias", {embed}});
    }
    out.push_back({p + "mlp.w1", {b.mlp.d_hid, b.mlp.d_in}});
    out.push_back({p + "mlp.b1", {b.mlp.d_hid}});
    out.push_back({p + "mlp.w2", {b.mlp.d_out, b.mlp.d_hid}});
    out.push_back({p + "mlp.b2", {b.mlp.d_out}});
  }
  if (spec.transformer()) {
    out.push_back({"final_ln.gain", {embed}});
    out.push_back({"final_ln.bias", {embed}});
  }
  out.push_back({"head.weight", {spec.num_classes, embed}});
  out.push_back({"head.bias", {spec.num_classes}});
  return out;
}

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IntegrityError("missing weight: " + name);
  return it->second;
}

Tensor& WeightStore::get(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IntegrityError("missing weight: " + name);
  return it->second;
}

void WeightStore::validate(const ModelSpec& spec) const {
  const auto req = required_weights(spec);
  std::set<std::string> expected;
  for (const auto& ts : req) {
    expected.insert(ts.name);
    const Tensor& t = get(ts.name);
    if (t.shape != ts.shape) {
      Tensor probe(ts.shape);
      throw IntegrityError("weight " + ts.name + " has shape " + t.shape_str() +
                           ", expected " + probe.shape_str());
    }
  }
  for (const auto& [name, t] : tensors) {
    (void)t;
    if (!expected.count(name)) throw IntegrityError("orphan weight: " + name);
  }
}

WeightStore init_weights(const ModelSpec& spec, uint64_t seed, bool zeros) {
  WeightStore ws;
  for (const auto& ts : required_weights(spec)) {
    Tensor t(ts.shape);
    if (!zeros) {
      const bool is_gain = ts.name.ends_with(".gain");
      const bool is_bias = ts.name.ends_with(".bias") || ts.name.ends_with(".b1") ||
                           ts.name.ends_with(".b2");
      if (is_gain) {
        std::fill(t.data.begin(), t.data.end(), 1.0f);
      } else if (!is_bias) {
        Rng rng = Rng::stream(seed, ts.name);
        for (float& v : t.data) v = static_cast<float>(rng.truncated_gaussian(0.02));
      }
    }
    ws.put(ts.name, std::move(t));
  }
  return ws;
}

namespace {

// y = x * W^T + b
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul_nt(x, w);
  add_row_inplace(y, std::span<const float>(b.data.data(), b.data.size()));
  return y;
}

void stream_tap(MlpTap* tap, size_t layer, const Tensor& pre, const Tensor& post) {
  if (!tap) return;
  const size_t n = pre.rows(), d = pre.cols();
  for (size_t i = 0; i < n; ++i) {
    tap->on_hidden(layer, std::span<const float>(pre.row(i), d),
                   std::span<const float>(post.row(i), d));
  }
}

Tensor mlp_block(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2, MlpTap* tap, size_t layer) {
  Tensor pre = linear(x, w1, b1);
  Tensor post = gelu(pre);
  stream_tap(tap, layer, pre, post);
  return linear(post, w2, b2);
}

// Multi-head self-attention over one sample's token rows [T, E].
Tensor attention(const Tensor& x, const Tensor& wqkv, const Tensor& bqkv,
                 const Tensor& wproj, const Tensor& bproj, size_t heads) {
  const size_t t = x.rows(), e = x.cols(), dh = e / heads;
  Tensor qkv = linear(x, wqkv, bqkv);  // [T, 3E]
  Tensor ctx({t, e});
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (size_t h = 0; h < heads; ++h) {
    Tensor q({t, dh}), k({t, dh}), v({t, dh});
    for (size_t i = 0; i < t; ++i) {
      const float* src = qkv.row(i);
      std::copy_n(src + h * dh, dh, q.row(i));
      std::copy_n(src + e + h * dh, dh, k.row(i));
      std::copy_n(src + 2 * e + h * dh, dh, v.row(i));
    }
    Tensor scores = matmul_nt(q, k);
    for (float& s : scores.data) s *= scale;
    Tensor probs = softmax(scores);
    Tensor o = matmul(probs, v);
    for (size_t i = 0; i < t; ++i) std::copy_n(o.row(i), dh, ctx.row(i) + h * dh);
  }
  return linear(ctx, wproj, bproj);
}

}  // namespace

Tensor forward_mlp(const MlpShape& shape, const Tensor& w1, const Tensor& b1,
                   const Tensor& w2, const Tensor& b2, const Tensor& x, MlpTap* tap,
                   size_t layer_index) {
  if (w1.ndim() != 2 || w1.rows() != shape.d_hid || w1.cols() != shape.d_in ||
      b1.numel() != shape.d_hid || w2.ndim() != 2 || w2.rows() != shape.d_out ||
      w2.cols() != shape.d_hid || b2.numel() != shape.d_out) {
    throw DimensionError("forward_mlp weight shapes do not match mlp shape: w1 " +
                         w1.shape_str() + ", w2 " + w2.shape_str());
  }
  if (x.ndim() != 2 || x.cols() != shape.d_in) {
    throw DimensionError("forward_mlp input " + x.shape_str() + " does not match d_in");
  }
  return mlp_block(x, w1, b1, w2, b2, tap, layer_index);
}

Tensor forward_model(const ModelSpec& spec, const WeightStore& weights, const Tensor& batch,
                     MlpTap* tap) {
  spec.validate();
  const size_t embed = spec.embed_dim();
  if (batch.ndim() != 3) {
    throw DimensionError("forward_model expects a [batch, rows, features] tensor, got " +
                         batch.shape_str());
  }
  const size_t bsz = batch.shape[0];
  const size_t in_rows = batch.shape[1];
  const size_t in_feat = batch.shape[2];
  const size_t t = spec.num_tokens;

  // Token matrix for the whole batch, [B*T, E].
  Tensor x({bsz * t, embed});
  if (spec.patch_embed) {
    if (in_rows != t - 1 || in_feat != spec.patch_embed->in_features) {
      throw DimensionError("patch input must be [batch, num_tokens-1, in_features], got " +
                           batch.shape_str());
    }
    Tensor flat({bsz * in_rows, in_feat},
                std::vector<float>(batch.data.begin(), batch.data.end()));
    Tensor emb = linear(flat, weights.get("patch_embed.weight"), weights.get("patch_embed.bias"));
    const Tensor& cls = weights.get("cls_token");
    const Tensor& pos = weights.get("pos_embed");
    for (size_t b = 0; b < bsz; ++b) {
      float* dst0 = x.row(b * t);
      for (size_t j = 0; j < embed; ++j) dst0[j] = cls.data[j] + pos.at(0, j);
      for (size_t p = 0; p < in_rows; ++p) {
        const float* src = emb.row(b * in_rows + p);
        const float* prow = pos.row(p + 1);
        float* dst = x.row(b * t + p + 1);
        for (size_t j = 0; j < embed; ++j) dst[j] = src[j] + prow[j];
      }
    }
  } else {
    if (in_rows != t || in_feat != embed) {
      throw DimensionError("input must be [batch, num_tokens, embed_dim], got " +
                           batch.shape_str());
    }
    x = Tensor({bsz * t, embed}, std::vector<float>(batch.data.begin(), batch.data.end()));
  }

  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    const BlockShape& blk = spec.blocks[l];
    const std::string p = "block." + std::to_string(l) + ".";
    if (blk.num_heads > 0) {
      Tensor normed = layer_norm(x, weights.get(p + "ln1.gain"), weights.get(p + "ln1.bias"),
                                 kLayerNormEps);
      // Attention is per sample; slice token rows out of the batch matrix.
      Tensor att({bsz * t, embed});
      for (size_t b = 0; b < bsz; ++b) {
        Tensor xs({t, embed},
                  std::vector<float>(normed.row(b * t), normed.row(b * t) + t * embed));
        Tensor as = attention(xs, weights.get(p + "attn.qkv.weight"),
                              weights.get(p + "attn.qkv.bias"),
                              weights.get(p + "attn.proj.weight"),
                              weights.get(p + "attn.proj.bias"), blk.num_heads);
        std::copy_n(as.data.data(), t * embed, att.row(b * t));
      }
      add_inplace(x, att);
      Tensor normed2 = layer_norm(x, weights.get(p + "ln2.gain"), weights.get(p + "ln2.bias"),
                                  kLayerNormEps);
      Tensor m = mlp_block(normed2, weights.get(p + "mlp.w1"), weights.get(p + "mlp.b1"),
                           weights.get(p + "mlp.w2"), weights.get(p + "mlp.b2"), tap, l);
      add_inplace(x, m);
    } else {
      x = mlp_block(x, weights.get(p + "mlp.w1"), weights.get(p + "mlp.b1"),
                    weights.get(p + "mlp.w2"), weights.get(p + "mlp.b2"), tap, l);
    }
  }

  if (spec.transformer()) {
    x = layer_norm(x, weights.get("final_ln.gain"), weights.get("final_ln.bias"), kLayerNormEps);
  }
  Tensor readout({bsz, embed});
  for (size_t b = 0; b < bsz; ++b) std::copy_n(x.row(b * t), embed, readout.row(b));
  return linear(readout, weights.get("head.weight"), weights.get("head.bias"));
}

uint64_t linear_param_count(size_t d_in, size_t d_out) {
  return static_cast<uint64_t>(d_in) * d_out + d_out;
}

uint64_t count_params(const ModelSpec& spec) {
  uint64_t n = 0;
  for (const auto& ts : required_weights(spec)) {
    uint64_t p = 1;
    for (size_t d : ts.shape) p *= d;
    n += p;
  }
  return n;
}

uint64_t count_macs(const ModelSpec& spec) {
  spec.validate();
  const uint64_t embed = spec.embed_dim();
  const uint64_t t = spec.num_tokens;
  uint64_t macs = 0;
  if (spec.patch_embed) {
    macs += (t - 1) * static_cast<uint64_t>(spec.patch_embed->in_features) * embed;
  }
  for (const BlockShape& b : spec.blocks) {
    uint64_t per_token = 0;
    if (b.num_heads > 0) {
      per_token += embed * 3 * embed;      // qkv
      per_token += embed * embed;          // proj
      per_token += 2 * t * embed;          // attention scores + weighted values
    }
    per_token += static_cast<uint64_t>(b.mlp.d_in) * b.mlp.d_hid;
    per_token += static_cast<uint64_t>(b.mlp.d_hid) * b.mlp.d_out;
    macs += t * per_token;
  }
  macs += embed * static_cast<uint64_t>(spec.num_classes);  // class-token readout
  return macs;
}

ModelSpec prune_shape(const ModelSpec& spec,
                      const std::vector<std::vector<size_t>>& pruned_per_block) {
  spec.validate();
  if (pruned_per_block.size() != spec.blocks.size()) {
    throw PlanError("plan covers " + std::to_string(pruned_per_block.size()) +
                    " layers, model has " + std::to_string(spec.blocks.size()));
  }
  ModelSpec out = spec;
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    const size_t hid = spec.blocks[l].mlp.d_hid;
    std::set<size_t> seen;
    for (size_t idx : pruned_per_block[l]) {
      if (idx >= hid) {
        throw PlanError("pruned index " + std::to_string(idx) + " out of range for layer " +
                        std::to_string(l) + " (d_hid=" + std::to_string(hid) + ")");
      }
      if (!seen.insert(idx).second) {
        throw PlanError("duplicate pruned index " + std::to_string(idx) + " in layer " +
                        std::to_string(l));
      }
    }
    if (seen.size() >= hid) {
      throw PlanError("layer " + std::to_string(l) + " would lose all hidden neurons");
    }
    out.blocks[l].mlp.d_hid = hid - seen.size();
  }
  return out;
}

}  // namespace vbp
