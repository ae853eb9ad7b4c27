// SPDX-License-Identifier: Apache-2.0

#include "vbp/reference.hpp"

#include <cmath>
#include <vector>

#include "vbp/error.hpp"

namespace vbp {
namespace reference {

namespace {

using Rows = std::vector<std::vector<double>>;

Rows linear(const Rows& x, const Tensor& w, const Tensor& b) {
  Rows y(x.size(), std::vector<double>(w.rows(), 0.0));
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t o = 0; o < w.rows(); ++o) {
      double acc = static_cast<double>(b.data[o]);
      const float* row = w.row(o);
      for (size_t j = 0; j < x[i].size(); ++j) acc += static_cast<double>(row[j]) * x[i][j];
      y[i][o] = acc;
    }
  }
  return y;
}

double gelu1(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

Rows layer_norm(const Rows& x, const Tensor& g, const Tensor& b, double eps) {
  Rows y(x.size(), std::vector<double>(x.empty() ? 0 : x[0].size(), 0.0));
  for (size_t i = 0; i < x.size(); ++i) {
    const size_t d = x[i].size();
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < d; ++j) {
      y[i][j] = (x[i][j] - mean) * inv * static_cast<double>(g.data[j]) +
                static_cast<double>(b.data[j]);
    }
  }
  return y;
}

std::vector<double> softmax1(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> y(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (double& v : y) v /= sum;
  return y;
}

Rows attention(const Rows& x, const Tensor& wqkv, const Tensor& bqkv, const Tensor& wproj,
               const Tensor& bproj, size_t heads) {
  const size_t t = x.size(), e = x[0].size(), dh = e / heads;
  Rows qkv = linear(x, wqkv, bqkv);
  Rows ctx(t, std::vector<double>(e, 0.0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t h = 0; h < heads; ++h) {
    for (size_t i = 0; i < t; ++i) {
      std::vector<double> scores(t, 0.0);
      for (size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < dh; ++k) {
          acc += qkv[i][h * dh + k] * qkv[j][e + h * dh + k];
        }
        scores[j] = acc * scale;
      }
      std::vector<double> probs = softmax1(scores);
      for (size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (size_t j = 0; j < t; ++j) acc += probs[j] * qkv[j][2 * e + h * dh + k];
        ctx[i][h * dh + k] = acc;
      }
    }
  }
  return linear(ctx, wproj, bproj);
}

Rows mlp(const Rows& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
         const MeanOverride* ov) {
  Rows h = linear(x, w1, b1);
  for (auto& row : h) {
    for (double& v : row) v = gelu1(v);
  }
  if (ov) {
    for (auto& row : h) {
      for (size_t k = 0; k < ov->indices.size(); ++k) row[ov->indices[k]] = ov->values[k];
    }
  }
  return linear(h, w2, b2);
}

}  // namespace

Tensor forward(const ModelSpec& spec, const WeightStore& weights, const Tensor& batch,
               const std::vector<MeanOverride>* overrides) {
  spec.validate();
  weights.validate(spec);
  if (batch.ndim() != 3) throw DimensionError("reference forward expects a 3-d batch");
  if (overrides && overrides->size() != spec.blocks.size()) {
    throw UsageError("overrides must have one entry per block");
  }
  const size_t bsz = batch.shape[0];
  const size_t rows = batch.shape[1];
  const size_t feat = batch.shape[2];
  const size_t embed = spec.embed_dim();
  const size_t t = spec.num_tokens;

  Tensor logits({bsz, spec.num_classes});
  for (size_t b = 0; b < bsz; ++b) {
    Rows raw(rows, std::vector<double>(feat, 0.0));
    for (size_t i = 0; i < rows; ++i) {
      const float* src = batch.data.data() + (b * rows + i) * feat;
      for (size_t j = 0; j < feat; ++j) raw[i][j] = static_cast<double>(src[j]);
    }

    Rows x;
    if (spec.patch_embed) {
      Rows emb = linear(raw, weights.get("patch_embed.weight"), weights.get("patch_embed.bias"));
      const Tensor& cls = weights.get("cls_token");
      const Tensor& pos = weights.get("pos_embed");
      x.assign(t, std::vector<double>(embed, 0.0));
      for (size_t j = 0; j < embed; ++j) {
        x[0][j] = static_cast<double>(cls.data[j]) + static_cast<double>(pos.at(0, j));
      }
      for (size_t p = 0; p < rows; ++p) {
        for (size_t j = 0; j < embed; ++j) {
          x[p + 1][j] = emb[p][j] + static_cast<double>(pos.at(p + 1, j));
        }
      }
    } else {
      x = raw;
    }

    for (size_t l = 0; l < spec.blocks.size(); ++l) {
      const BlockShape& blk = spec.blocks[l];
      const std::string p = "block." + std::to_string(l) + ".";
      const MeanOverride* ov = overrides ? &(*overrides)[l] : nullptr;
      if (blk.num_heads > 0) {
        Rows n1 = layer_norm(x, weights.get(p + "ln1.gain"), weights.get(p + "ln1.bias"),
                             kLayerNormEps);
        Rows att = attention(n1, weights.get(p + "attn.qkv.weight"),
                             weights.get(p + "attn.qkv.bias"),
                             weights.get(p + "attn.proj.weight"),
                             weights.get(p + "attn.proj.bias"), blk.num_heads);
        for (size_t i = 0; i < t; ++i) {
          for (size_t j = 0; j < embed; ++j) x[i][j] += att[i][j];
        }
        Rows n2 = layer_norm(x, weights.get(p + "ln2.gain"), weights.get(p + "ln2.bias"),
                             kLayerNormEps);
        Rows m = mlp(n2, weights.get(p + "mlp.w1"), weights.get(p + "mlp.b1"),
                     weights.get(p + "mlp.w2"), weights.get(p + "mlp.b2"), ov);
        for (size_t i = 0; i < t; ++i) {
          for (size_t j = 0; j < embed; ++j) x[i][j] += m[i][j];
        }
      } else {
        x = mlp(x, weights.get(p + "mlp.w1"), weights.get(p + "mlp.b1"),
                weights.get(p + "mlp.w2"), weights.get(p + "mlp.b2"), ov);
      }
    }

    if (spec.transformer()) {
      x = layer_norm(x, weights.get("final_ln.gain"), weights.get("final_ln.bias"),
                     kLayerNormEps);
    }
    Rows head_in(1, x[0]);
    Rows z = linear(head_in, weights.get("head.weight"), weights.get("head.bias"));
    for (size_t c = 0; c < spec.num_classes; ++c) {
      logits.at(b, c) = static_cast<float>(z[0][c]);
    }
  }
  return logits;
}

}  // namespace reference
}  // namespace vbp
