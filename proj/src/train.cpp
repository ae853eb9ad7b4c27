// SPDX-License-Identifier: Apache-2.0

#include "vbp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "vbp/error.hpp"
#include "vbp/rng.hpp"

namespace vbp {
namespace train {

namespace {

Mat from_tensor(const Tensor& t) {
  Mat m;
  if (t.ndim() == 2) {
    m = Mat(t.shape[0], t.shape[1]);
  } else {
    m = Mat(1, t.numel());
  }
  for (size_t i = 0; i < t.numel(); ++i) m.d[i] = static_cast<double>(t.data[i]);
  return m;
}

// y = x * W^T + b(row)
Mat linear_fwd(const Mat& x, const Mat& w, const Mat& b) {
  Mat y(x.rows, w.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    for (size_t o = 0; o < w.rows; ++o) {
      const double* wo = w.row(o);
      double acc = b.d[o];
      for (size_t j = 0; j < x.cols; ++j) acc += xi[j] * wo[j];
      y.at(i, o) = acc;
    }
  }
  return y;
}

// Accumulates dW += dy^T x, db += colsum(dy); returns dx = dy * W.
Mat linear_bwd(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Mat& db) {
  for (size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double* dyi = dy.row(i);
    for (size_t o = 0; o < w.rows; ++o) {
      const double g = dyi[o];
      if (g == 0.0) continue;
      double* dwo = dw.row(o);
      for (size_t j = 0; j < x.cols; ++j) dwo[j] += g * xi[j];
      db.d[o] += g;
    }
  }
  Mat dx(x.rows, x.cols);
  for (size_t i = 0; i < x.rows; ++i) {
    const double* dyi = dy.row(i);
    double* dxi = dx.row(i);
    for (size_t o = 0; o < w.rows; ++o) {
      const double g = dyi[o];
      if (g == 0.0) continue;
      const double* wo = w.row(o);
      for (size_t j = 0; j < x.cols; ++j) dxi[j] += g * wo[j];
    }
  }
  return dx;
}

constexpr double kEps = static_cast<double>(kLayerNormEps);

struct LnCache {
  Mat xhat;
  std::vector<double> inv;  // 1/sqrt(var+eps) per row
  Mat out;
};

LnCache ln_fwd(const Mat& x, const Mat& gain, const Mat& bias) {
  LnCache c;
  c.xhat = Mat(x.rows, x.cols);
  c.out = Mat(x.rows, x.cols);
  c.inv.resize(x.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (size_t j = 0; j < x.cols; ++j) mean += xi[j];
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (size_t j = 0; j < x.cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + kEps);
    c.inv[i] = inv;
    for (size_t j = 0; j < x.cols; ++j) {
      const double xh = (xi[j] - mean) * inv;
      c.xhat.at(i, j) = xh;
      c.out.at(i, j) = xh * gain.d[j] + bias.d[j];
    }
  }
  return c;
}

Mat ln_bwd(const LnCache& c, const Mat& gain, const Mat& dy, Mat& dgain, Mat& dbias) {
  Mat dx(dy.rows, dy.cols);
  const double n = static_cast<double>(dy.cols);
  for (size_t i = 0; i < dy.rows; ++i) {
    const double* dyi = dy.row(i);
    const double* xh = c.xhat.row(i);
    double m1 = 0.0, m2 = 0.0;
    for (size_t j = 0; j < dy.cols; ++j) {
      const double dxh = dyi[j] * gain.d[j];
      m1 += dxh;
      m2 += dxh * xh[j];
      dgain.d[j] += dyi[j] * xh[j];
      dbias.d[j] += dyi[j];
    }
    m1 /= n;
    m2 /= n;
    double* dxi = dx.row(i);
    for (size_t j = 0; j < dy.cols; ++j) {
      const double dxh = dyi[j] * gain.d[j];
      dxi[j] = (dxh - m1 - xh[j] * m2) * c.inv[i];
    }
  }
  return dx;
}

struct AttnCache {
  Mat qkv;                 // [T, 3E]
  std::vector<Mat> probs;  // per head [T, T]
  Mat ctx;                 // [T, E]
};

struct BlockCache {
  Mat in;  // block input
  LnCache ln1;
  AttnCache attn;
  Mat res1;  // in + attention
  LnCache ln2;
  Mat mlp_in;   // ln2.out (transformer) or block input (mlp-only)
  Mat mlp_pre;  // before gelu
  Mat mlp_post;
  Mat out;
};

struct SampleCache {
  Mat raw;  // input rows as given
  Mat x0;   // token matrix entering block 0
  std::vector<BlockCache> blocks;
  LnCache final_ln;
  Mat readout;  // [1, E]
  std::vector<double> logits;
};

AttnCache attn_fwd(const Mat& x, const Mat& wqkv, const Mat& bqkv, size_t heads) {
  AttnCache c;
  const size_t t = x.rows, e = x.cols, dh = e / heads;
  c.qkv = linear_fwd(x, wqkv, bqkv);
  c.ctx = Mat(t, e);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t h = 0; h < heads; ++h) {
    Mat probs(t, t);
    for (size_t i = 0; i < t; ++i) {
      double mx = -1e300;
      std::vector<double> sc(t);
      for (size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < dh; ++k) {
          acc += c.qkv.at(i, h * dh + k) * c.qkv.at(j, e + h * dh + k);
        }
        sc[j] = acc * scale;
        mx = std::max(mx, sc[j]);
      }
      double sum = 0.0;
      for (size_t j = 0; j < t; ++j) {
        sc[j] = std::exp(sc[j] - mx);
        sum += sc[j];
      }
      for (size_t j = 0; j < t; ++j) probs.at(i, j) = sc[j] / sum;
    }
    for (size_t i = 0; i < t; ++i) {
      for (size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (size_t j = 0; j < t; ++j) acc += probs.at(i, j) * c.qkv.at(j, 2 * e + h * dh + k);
        c.ctx.at(i, h * dh + k) = acc;
      }
    }
    c.probs.push_back(std::move(probs));
  }
  return c;
}

// dctx in; returns d(ln1 out); accumulates qkv weight grads.
Mat attn_bwd(const AttnCache& c, const Mat& x, const Mat& wqkv, size_t heads, const Mat& dctx,
             Mat& dwqkv, Mat& dbqkv) {
  const size_t t = x.rows, e = x.cols, dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dqkv(t, 3 * e);
  for (size_t h = 0; h < heads; ++h) {
    const Mat& probs = c.probs[h];
    // dV and dP
    Mat dp(t, t);
    for (size_t i = 0; i < t; ++i) {
      for (size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < dh; ++k) {
          acc += dctx.at(i, h * dh + k) * c.qkv.at(j, 2 * e + h * dh + k);
        }
        dp.at(i, j) = acc;
      }
    }
    for (size_t j = 0; j < t; ++j) {
      for (size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < t; ++i) acc += probs.at(i, j) * dctx.at(i, h * dh + k);
        dqkv.at(j, 2 * e + h * dh + k) += acc;
      }
    }
    // softmax backward into dS
    Mat ds(t, t);
    for (size_t i = 0; i < t; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < t; ++j) dot += dp.at(i, j) * probs.at(i, j);
      for (size_t j = 0; j < t; ++j) {
        ds.at(i, j) = probs.at(i, j) * (dp.at(i, j) - dot);
      }
    }
    // dQ = dS K scale ; dK = dS^T Q scale
    for (size_t i = 0; i < t; ++i) {
      for (size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (size_t j = 0; j < t; ++j) acc += ds.at(i, j) * c.qkv.at(j, e + h * dh + k);
        dqkv.at(i, h * dh + k) += acc * scale;
      }
    }
    for (size_t j = 0; j < t; ++j) {
      for (size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < t; ++i) acc += ds.at(i, j) * c.qkv.at(i, h * dh + k);
        dqkv.at(j, e + h * dh + k) += acc * scale;
      }
    }
  }
  return linear_bwd(x, wqkv, dqkv, dwqkv, dbqkv);
}

double gelu1(double x) { return gelu_f64(x); }

void forward_sample(const ModelSpec& spec, const ParamMap& params, const float* feat,
                    size_t rows, size_t cols, SampleCache& c) {
  const size_t embed = spec.embed_dim();
  const size_t t = spec.num_tokens;
  c.raw = Mat(rows, cols);
  for (size_t i = 0; i < rows * cols; ++i) c.raw.d[i] = static_cast<double>(feat[i]);

  if (spec.patch_embed) {
    Mat emb = linear_fwd(c.raw, params.at("patch_embed.weight"), params.at("patch_embed.bias"));
    const Mat& cls = params.at("cls_token");
    const Mat& pos = params.at("pos_embed");
    c.x0 = Mat(t, embed);
    for (size_t j = 0; j < embed; ++j) c.x0.at(0, j) = cls.d[j] + pos.at(0, j);
    for (size_t p = 0; p < rows; ++p) {
      for (size_t j = 0; j < embed; ++j) c.x0.at(p + 1, j) = emb.at(p, j) + pos.at(p + 1, j);
    }
  } else {
    c.x0 = c.raw;
  }

  Mat x = c.x0;
  c.blocks.assign(spec.blocks.size(), {});
  for (size_t l = 0; l < spec.blocks.size(); ++l) {
    const BlockShape& blk = spec.blocks[l];
    const std::string p = "block." + std::to_string(l) + ".";
    BlockCache& bc = c.blocks[l];
    bc.in = x;
    if (blk.num_heads > 0) {
      bc.ln1 = ln_fwd(x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
      bc.attn = attn_fwd(bc.ln1.out, params.at(p + "attn.qkv.weight"),
                         params.at(p + "attn.qkv.bias"), blk.num_heads);
      Mat att = linear_fwd(bc.attn.ctx, params.at(p + "attn.proj.weight"),
                           params.at(p + "attn.proj.bias"));
      bc.res1 = Mat(t, embed);
      for (size_t i = 0; i < t * embed; ++i) bc.res1.d[i] = x.d[i] + att.d[i];
      bc.ln2 = ln_fwd(bc.res1, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
      bc.mlp_in = bc.ln2.out;
    } else {
      bc.mlp_in = x;
    }
    bc.mlp_pre = linear_fwd(bc.mlp_in, params.at(p + "mlp.w1"), params.at(p + "mlp.b1"));
    bc.mlp_post = bc.mlp_pre;
    for (double& v : bc.mlp_post.d) v = gelu1(v);
    Mat m = linear_fwd(bc.mlp_post, params.at(p + "mlp.w2"), params.at(p + "mlp.b2"));
    if (blk.num_heads > 0) {
      bc.out = Mat(t, embed);
      for (size_t i = 0; i < t * embed; ++i) bc.out.d[i] = bc.res1.d[i] + m.d[i];
    } else {
      bc.out = std::move(m);
    }
    x = bc.out;
  }

  Mat last_row(1, embed);
  if (spec.transformer()) {
    c.final_ln = ln_fwd(x, params.at("final_ln.gain"), params.at("final_ln.bias"));
    for (size_t j = 0; j < embed; ++j) last_row.d[j] = c.final_ln.out.at(0, j);
  } else {
    for (size_t j = 0; j < embed; ++j) last_row.d[j] = x.at(0, j);
  }
  c.readout = last_row;
  Mat z = linear_fwd(last_row, params.at("head.weight"), params.at("head.bias"));
  c.logits.assign(z.d.begin(), z.d.end());
}

void backward_sample(const ModelSpec& spec, const ParamMap& params, const SampleCache& c,
                     const std::vector<double>& dlogits, ParamMap& grads) {
  const size_t embed = spec.embed_dim();
  const size_t t = spec.num_tokens;

  Mat dz(1, dlogits.size());
  dz.d = dlogits;
  Mat dreadout = linear_bwd(c.readout, params.at("head.weight"), dz, grads.at("head.weight"),
                            grads.at("head.bias"));

  Mat dx(t, embed);
  if (spec.transformer()) {
    Mat dfinal(t, embed);
    for (size_t j = 0; j < embed; ++j) dfinal.at(0, j) = dreadout.d[j];
    dx = ln_bwd(c.final_ln, params.at("final_ln.gain"), dfinal, grads.at("final_ln.gain"),
                grads.at("final_ln.bias"));
  } else {
    for (size_t j = 0; j < embed; ++j) dx.at(0, j) = dreadout.d[j];
  }

  for (size_t l = spec.blocks.size(); l-- > 0;) {
    const BlockShape& blk = spec.blocks[l];
    const std::string p = "block." + std::to_string(l) + ".";
    const BlockCache& bc = c.blocks[l];

    // MLP backward
    Mat dpost = linear_bwd(bc.mlp_post, params.at(p + "mlp.w2"), dx, grads.at(p + "mlp.w2"),
                           grads.at(p + "mlp.b2"));
    Mat dpre = dpost;
    for (size_t i = 0; i < dpre.d.size(); ++i) dpre.d[i] *= gelu_grad_f64(bc.mlp_pre.d[i]);
    Mat dmlp_in = linear_bwd(bc.mlp_in, params.at(p + "mlp.w1"), dpre, grads.at(p + "mlp.w1"),
                             grads.at(p + "mlp.b1"));

    if (blk.num_heads > 0) {
      // residual: dres1 = dx (from out) + ln2 backward of dmlp_in
      Mat dres1 = ln_bwd(bc.ln2, params.at(p + "ln2.gain"), dmlp_in, grads.at(p + "ln2.gain"),
                         grads.at(p + "ln2.bias"));
      for (size_t i = 0; i < dres1.d.size(); ++i) dres1.d[i] += dx.d[i];

      Mat dctx = linear_bwd(bc.attn.ctx, params.at(p + "attn.proj.weight"), dres1,
                            grads.at(p + "attn.proj.weight"), grads.at(p + "attn.proj.bias"));
      Mat dln1_out = attn_bwd(bc.attn, bc.ln1.out, params.at(p + "attn.qkv.weight"),
                              blk.num_heads, dctx, grads.at(p + "attn.qkv.weight"),
                              grads.at(p + "attn.qkv.bias"));
      Mat dblock_in = ln_bwd(bc.ln1, params.at(p + "ln1.gain"), dln1_out,
                             grads.at(p + "ln1.gain"), grads.at(p + "ln1.bias"));
      for (size_t i = 0; i < dblock_in.d.size(); ++i) dblock_in.d[i] += dres1.d[i];
      dx = std::move(dblock_in);
    } else {
      dx = std::move(dmlp_in);
    }
  }

  if (spec.patch_embed) {
    Mat& dpos = grads.at("pos_embed");
    Mat& dcls = grads.at("cls_token");
    for (size_t i = 0; i < t; ++i) {
      for (size_t j = 0; j < embed; ++j) dpos.at(i, j) += dx.at(i, j);
    }
    for (size_t j = 0; j < embed; ++j) dcls.d[j] += dx.at(0, j);
    Mat demb(t - 1, embed);
    for (size_t p = 0; p + 1 < t; ++p) {
      for (size_t j = 0; j < embed; ++j) demb.at(p, j) = dx.at(p + 1, j);
    }
    linear_bwd(c.raw, params.at("patch_embed.weight"), demb, grads.at("patch_embed.weight"),
               grads.at("patch_embed.bias"));
  }
}

std::vector<double> softmax_vec(const std::vector<double>& z, double temp) {
  double mx = z[0] / temp;
  std::vector<double> y(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    y[i] = z[i] / temp;
    mx = std::max(mx, y[i]);
  }
  double sum = 0.0;
  for (double& v : y) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : y) v /= sum;
  return y;
}

double ce_vec(const std::vector<double>& z, uint32_t label) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  return std::log(sum) + mx - z[label];
}

}  // namespace

ParamMap to_params(const ModelSpec& spec, const WeightStore& weights) {
  weights.validate(spec);
  ParamMap params;
  for (const auto& ts : required_weights(spec)) {
    params[ts.name] = from_tensor(weights.get(ts.name));
  }
  return params;
}

WeightStore to_weights(const ModelSpec& spec, const ParamMap& params) {
  WeightStore ws;
  for (const auto& ts : required_weights(spec)) {
    const Mat& m = params.at(ts.name);
    Tensor t(ts.shape);
    for (size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<float>(m.d[i]);
    ws.put(ts.name, std::move(t));
  }
  return ws;
}

double kd_loss(const Mat& student_logits, const Mat& teacher_logits,
               std::span<const uint32_t> labels, double alpha, double temperature) {
  if (student_logits.rows != teacher_logits.rows ||
      student_logits.cols != teacher_logits.cols || labels.size() != student_logits.rows) {
    throw DimensionError("kd_loss shape mismatch between student, teacher, and labels");
  }
  if (alpha < 0.0 || alpha > 1.0) throw UsageError("kd alpha must be in [0,1]");
  if (!(temperature > 0.0)) throw UsageError("kd temperature must be > 0");
  const size_t b = student_logits.rows;
  double ce = 0.0, kl = 0.0;
  for (size_t i = 0; i < b; ++i) {
    std::vector<double> z(student_logits.row(i), student_logits.row(i) + student_logits.cols);
    std::vector<double> zt(teacher_logits.row(i), teacher_logits.row(i) + teacher_logits.cols);
    ce += ce_vec(z, labels[i]);
    const std::vector<double> ps = softmax_vec(z, temperature);
    const std::vector<double> pt = softmax_vec(zt, temperature);
    for (size_t c = 0; c < z.size(); ++c) {
      if (pt[c] > 0.0) kl += pt[c] * (std::log(pt[c]) - std::log(ps[c]));
    }
  }
  ce /= static_cast<double>(b);
  kl /= static_cast<double>(b);
  return (1.0 - alpha) * ce + alpha * temperature * temperature * kl;
}

Mat kd_loss_grad(const Mat& student_logits, const Mat& teacher_logits,
                 std::span<const uint32_t> labels, double alpha, double temperature) {
  const size_t b = student_logits.rows, c = student_logits.cols;
  Mat g(b, c);
  for (size_t i = 0; i < b; ++i) {
    std::vector<double> z(student_logits.row(i), student_logits.row(i) + c);
    std::vector<double> zt(teacher_logits.row(i), teacher_logits.row(i) + c);
    const std::vector<double> p1 = softmax_vec(z, 1.0);
    const std::vector<double> ps = softmax_vec(z, temperature);
    const std::vector<double> pt = softmax_vec(zt, temperature);
    for (size_t k = 0; k < c; ++k) {
      double d = (1.0 - alpha) * (p1[k] - (k == labels[i] ? 1.0 : 0.0));
      d += alpha * temperature * (ps[k] - pt[k]);
      g.at(i, k) = d / static_cast<double>(b);
    }
  }
  return g;
}

double loss_and_grads(const ModelSpec& spec, const ParamMap& params, const Dataset& ds,
                      std::span<const size_t> indices, const Mat* teacher_logits,
                      const KdConfig& kd, ParamMap* grads) {
  if (indices.empty()) throw UsageError("empty batch");
  if (kd.enabled && !teacher_logits) throw UsageError("kd enabled but no teacher logits given");
  if (grads) {
    grads->clear();
    for (const auto& [name, m] : params) (*grads)[name] = Mat(m.rows, m.cols);
  }
  const double b = static_cast<double>(indices.size());
  const double alpha = kd.enabled ? kd.alpha : 0.0;
  const double temp = kd.temperature;

  double ce_sum = 0.0, kl_sum = 0.0;
  SampleCache cache;
  for (size_t idx : indices) {
    const Tensor& f = ds.features[idx];
    forward_sample(spec, params, f.data.data(), f.shape[0], f.shape[1], cache);
    for (double v : cache.logits) {
      if (!std::isfinite(v)) throw NumericError("non-finite logit during training");
    }
    const uint32_t label = ds.labels[idx];
    ce_sum += ce_vec(cache.logits, label);

    std::vector<double> dlogits(cache.logits.size(), 0.0);
    const std::vector<double> p1 = softmax_vec(cache.logits, 1.0);
    for (size_t k = 0; k < dlogits.size(); ++k) {
      dlogits[k] = (1.0 - alpha) * (p1[k] - (k == label ? 1.0 : 0.0)) / b;
    }
    if (kd.enabled) {
      std::vector<double> zt(teacher_logits->row(idx), teacher_logits->row(idx) + teacher_logits->cols);
      const std::vector<double> ps = softmax_vec(cache.logits, temp);
      const std::vector<double> pt = softmax_vec(zt, temp);
      for (size_t k = 0; k < dlogits.size(); ++k) {
        dlogits[k] += alpha * temp * (ps[k] - pt[k]) / b;
        if (pt[k] > 0.0) kl_sum += pt[k] * (std::log(pt[k]) - std::log(ps[k]));
      }
    }
    if (grads) backward_sample(spec, params, cache, dlogits, *grads);
  }
  const double ce = ce_sum / b;
  const double kl = kl_sum / b;
  return kd.enabled ? (1.0 - alpha) * ce + alpha * temp * temp * kl : ce;
}

Mat logits_f64(const ModelSpec& spec, const ParamMap& params, const Dataset& ds,
               std::span<const size_t> indices) {
  Mat out(indices.size(), spec.num_classes);
  SampleCache cache;
  for (size_t r = 0; r < indices.size(); ++r) {
    const Tensor& f = ds.features[indices[r]];
    forward_sample(spec, params, f.data.data(), f.shape[0], f.shape[1], cache);
    std::copy(cache.logits.begin(), cache.logits.end(), out.row(r));
  }
  return out;
}

EvalResult evaluate(const ModelSpec& spec, const WeightStore& weights, const Dataset& ds) {
  if (ds.size() == 0) throw UsageError("cannot evaluate on an empty dataset");
  spec.validate();
  size_t correct = 0;
  double loss = 0.0;
  constexpr size_t kBatch = 64;
  for (size_t s = 0; s < ds.size(); s += kBatch) {
    const size_t n = std::min(kBatch, ds.size() - s);
    Tensor logits = forward_model(spec, weights, batch_features(ds, s, n));
    for (size_t i = 0; i < n; ++i) {
      const float* row = logits.row(i);
      size_t best = 0;
      for (size_t c = 0; c < spec.num_classes; ++c) {
        if (!std::isfinite(row[c])) throw NumericError("non-finite logit during evaluation");
        if (row[c] > row[best]) best = c;
      }
      if (best == ds.labels[s + i]) correct += 1;
      std::vector<double> z(row, row + spec.num_classes);
      loss += ce_vec(z, ds.labels[s + i]);
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(ds.size()),
          loss / static_cast<double>(ds.size())};
}

double cosine_lr(double lr0, size_t step, size_t total_steps) {
  if (total_steps <= 1) return lr0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr0 * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

FinetuneResult finetune(const ModelSpec& spec, const WeightStore& weights,
                        std::optional<Teacher> teacher, const Dataset& train_ds,
                        const Dataset& val_ds, const FinetuneConfig& config) {
  spec.validate();
  if (config.epochs < 1) throw UsageError("epochs must be >= 1");
  if (config.batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (config.kd.alpha < 0.0 || config.kd.alpha > 1.0) throw UsageError("kd alpha must be in [0,1]");
  if (!(config.kd.temperature > 0.0)) throw UsageError("kd temperature must be > 0");
  if (train_ds.size() == 0) throw UsageError("empty training dataset");
  if (config.kd.enabled) {
    if (!teacher) throw UsageError("knowledge distillation requires a teacher model");
    if (teacher->spec->num_classes != spec.num_classes) {
      throw UsageError("teacher and student class counts differ");
    }
  }

  ParamMap params = to_params(spec, weights);
  ParamMap m_state, v_state;
  for (const auto& [name, m] : params) {
    m_state[name] = Mat(m.rows, m.cols);
    v_state[name] = Mat(m.rows, m.cols);
  }

  // Teacher logits are fixed; compute them once for the whole training set.
  Mat teacher_logits;
  if (config.kd.enabled) {
    ParamMap tparams = to_params(*teacher->spec, *teacher->weights);
    std::vector<size_t> all(train_ds.size());
    std::iota(all.begin(), all.end(), 0);
    teacher_logits = logits_f64(*teacher->spec, tparams, train_ds, all);
  }

  const size_t n = train_ds.size();
  const size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const size_t total_steps = steps_per_epoch * static_cast<size_t>(config.epochs);

  FinetuneResult result;
  ParamMap best_params = params;
  double best_top1 = -1.0;
  size_t step = 0;
  uint64_t adam_t = 0;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = Rng::stream(config.seed, "shuffle-epoch-" + std::to_string(epoch));
    for (size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    const double epoch_lr = cosine_lr(config.opt.lr, step, total_steps);
    double loss_sum = 0.0;
    ParamMap grads;
    for (size_t s = 0; s < n; s += config.batch_size) {
      const size_t bs = std::min<size_t>(config.batch_size, n - s);
      std::span<const size_t> idx(order.data() + s, bs);
      const double loss = loss_and_grads(spec, params, train_ds, idx,
                                         config.kd.enabled ? &teacher_logits : nullptr,
                                         config.kd, &grads);
      if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
      loss_sum += loss;

      const double lr = cosine_lr(config.opt.lr, step, total_steps);
      adam_t += 1;
      const double bc1 = 1.0 - std::pow(config.opt.beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(config.opt.beta2, static_cast<double>(adam_t));
      for (auto& [name, p] : params) {
        Mat& g = grads.at(name);
        Mat& mm = m_state.at(name);
        Mat& vv = v_state.at(name);
        // biases, norms, and embeddings (single-row params) are not decayed
        const double wd = p.rows > 1 ? config.opt.weight_decay : 0.0;
        for (size_t i = 0; i < p.d.size(); ++i) {
          mm.d[i] = config.opt.beta1 * mm.d[i] + (1.0 - config.opt.beta1) * g.d[i];
          vv.d[i] = config.opt.beta2 * vv.d[i] + (1.0 - config.opt.beta2) * g.d[i] * g.d[i];
          const double mhat = mm.d[i] / bc1;
          const double vhat = vv.d[i] / bc2;
          p.d[i] -= lr * (mhat / (std::sqrt(vhat) + config.opt.eps) + wd * p.d[i]);
        }
      }
      step += 1;
    }

    double val_top1 = 0.0;
    if (val_ds.size() > 0) {
      size_t correct = 0;
      std::vector<size_t> all(val_ds.size());
      std::iota(all.begin(), all.end(), 0);
      Mat logits = logits_f64(spec, params, val_ds, all);
      for (size_t i = 0; i < val_ds.size(); ++i) {
        const double* row = logits.row(i);
        size_t best = 0;
        for (size_t c = 0; c < spec.num_classes; ++c) {
          if (row[c] > row[best]) best = c;
        }
        if (best == val_ds.labels[i]) correct += 1;
      }
      val_top1 = static_cast<double>(correct) / static_cast<double>(val_ds.size());
    }
    if (val_top1 > best_top1) {
      best_top1 = val_top1;
      best_params = params;
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = epoch_lr;
    log.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    log.val_top1 = val_top1;
    log.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    result.log.push_back(log);
  }

  result.weights = to_weights(spec, val_ds.size() > 0 ? best_params : params);
  return result;
}

}  // namespace train
}  // namespace vbp
