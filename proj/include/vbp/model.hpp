// SPDX-License-Identifier: Apache-2.0
//
// Architecture shapes, named weight storage, forward passes, and the
// multiply-accumulate / parameter accounting. Blocks come in two flavors:
// pre-norm transformer blocks (num_heads > 0) and bare per-token MLP blocks
// (num_heads == 0, no norms/residuals/attention) used for controlled
// experiments. A model must use one flavor throughout.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbp/tensor.hpp"

namespace vbp {

struct MlpShape {
  size_t d_in = 0;
  size_t d_hid = 0;
  size_t d_out = 0;
};

struct BlockShape {
  size_t embed_dim = 0;
  size_t num_heads = 0;  // 0 = MLP-only block
  MlpShape mlp;
};

struct PatchEmbed {
  size_t in_features = 0;
};

struct ModelSpec {
  std::vector<BlockShape> blocks;
  size_t num_tokens = 0;
  size_t num_classes = 0;
  // When present: linear patch embedding over num_tokens-1 raw feature rows,
  // plus learned position embedding and class token.
  std::optional<PatchEmbed> patch_embed;

  bool transformer() const { return !blocks.empty() && blocks[0].num_heads > 0; }
  size_t embed_dim() const { return blocks.empty() ? 0 : blocks[0].embed_dim; }
  void validate() const;  // throws UsageError on inconsistent shapes
};

// Named presets used throughout: deit-tiny, deit-small, deit-base, toy.
ModelSpec preset_spec(const std::string& name);

struct TensorSpec {
  std::string name;
  std::vector<size_t> shape;
};

// The canonical weight set implied by a spec, in serialization order.
// Names: patch_embed.{weight,bias}, cls_token, pos_embed,
// block.<i>.{ln1,ln2}.{gain,bias}, block.<i>.attn.{qkv,proj}.{weight,bias},
// block.<i>.mlp.{w1,b1,w2,b2}, final_ln.{gain,bias}, head.{weight,bias}.
std::vector<TensorSpec> required_weights(const ModelSpec& spec);

struct WeightStore {
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const;  // IntegrityError if absent
  Tensor& get(const std::string& name);
  void put(std::string name, Tensor t) { tensors[std::move(name)] = std::move(t); }

  // Exact match against required_weights: shapes, no missing, no orphans.
  void validate(const ModelSpec& spec) const;
};

// Random init (truncated normal, std 0.02; LayerNorm gains 1) or all-zero
// shape-only weights for accounting runs.
WeightStore init_weights(const ModelSpec& spec, uint64_t seed, bool zeros = false);

// Receives each MLP layer's hidden activations, one token row at a time,
// both before and after the nonlinearity.
struct MlpTap {
  virtual ~MlpTap() = default;
  virtual void on_hidden(size_t layer, std::span<const float> pre,
                         std::span<const float> post) = 0;
};

// y = w2 * gelu(w1 x + b1) + b2, row-wise over x[n, d_in].
Tensor forward_mlp(const MlpShape& shape, const Tensor& w1, const Tensor& b1,
                   const Tensor& w2, const Tensor& b2, const Tensor& x,
                   MlpTap* tap = nullptr, size_t layer_index = 0);

// batch: [B, num_tokens, embed_dim], or [B, num_tokens-1, in_features] when
// patch_embed is set. Returns logits [B, num_classes]. Readout is token 0
// (the class token when patch_embed is present).
Tensor forward_model(const ModelSpec& spec, const WeightStore& weights,
                     const Tensor& batch, MlpTap* tap = nullptr);

constexpr float kLayerNormEps = 1e-6f;

uint64_t linear_param_count(size_t d_in, size_t d_out);  // d_in*d_out + d_out
uint64_t count_params(const ModelSpec& spec);

// MACs for one forward pass of a single sample. Linear layers contribute
// in*out per applied row; attention adds 2*num_tokens*embed_dim per token
// for the score and value products. LayerNorm/softmax are excluded.
uint64_t count_macs(const ModelSpec& spec);

// Shrinks each block's mlp.d_hid by the number of pruned indices.
ModelSpec prune_shape(const ModelSpec& spec,
                      const std::vector<std::vector<size_t>>& pruned_per_block);

}  // namespace vbp
