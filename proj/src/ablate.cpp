// SPDX-License-Identifier: Apache-2.0

#include "vbp/ablate.hpp"

#include <cmath>

#include "vbp/compensate.hpp"
#include "vbp/dataset.hpp"
#include "vbp/error.hpp"
#include "vbp/prune.hpp"
#include "vbp/rng.hpp"
#include "vbp/stats.hpp"

namespace vbp {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

double AblateArm::mean_retention() const { return mean_of(retention); }
double AblateArm::std_retention() const { return std_of(retention); }
double AblateArm::mean_final() const { return mean_of(final_top1); }

AblateParams default_ablate_params() {
  AblateParams p;
  p.spec = preset_spec("toy");
  p.finetune.epochs = 10;
  p.finetune.kd.enabled = true;
  return p;
}

AblateResult run_ablate(const AblateParams& params) {
  params.spec.validate();
  if (params.seeds < 1) throw UsageError("ablation needs at least one seed");
  if (!(params.rate > 0.0 && params.rate < 1.0)) throw UsageError("rate must be in (0,1)");
  if (params.spec.patch_embed) throw UsageError("ablation harness expects token-level models");
  if (params.tokens != params.spec.num_tokens || params.dim != params.spec.embed_dim() ||
      params.classes != params.spec.num_classes) {
    throw UsageError("data shape must match the model spec");
  }

  AblateResult result;
  const struct {
    const char* criterion;
    ShiftMode mode;
    const char* tap;
  } arm_defs[] = {
      {"variance", ShiftMode::shift, "post"},
      {"random", ShiftMode::shift, "post"},
      {"variance", ShiftMode::no_shift, "post"},
      {"random", ShiftMode::no_shift, "post"},
      {"variance", ShiftMode::shift, "pre"},
  };
  for (const auto& def : arm_defs) {
    AblateArm arm;
    arm.criterion = def.criterion;
    arm.mode = def.mode == ShiftMode::shift ? "shift" : "no-shift";
    arm.tap = def.tap;
    result.arms.push_back(arm);
  }

  for (int s = 0; s < params.seeds; ++s) {
    const uint64_t seed = params.base_seed + static_cast<uint64_t>(s);
    Dataset all = gen_data(params.samples, params.tokens, params.dim, params.classes,
                           seed, params.separation);
    const size_t ntrain = all.size() * 2 / 3;
    Dataset train_ds = all.slice(0, ntrain);
    Dataset eval_ds = all.slice(ntrain, all.size() - ntrain);

    WeightStore init = init_weights(params.spec, Rng::stream(seed, "init").next_u64());
    train::FinetuneConfig dense_cfg;
    dense_cfg.epochs = params.train_epochs;
    dense_cfg.opt.lr = params.train_lr;
    dense_cfg.batch_size = params.batch_size;
    dense_cfg.seed = seed;
    auto dense = train::finetune(params.spec, init, std::nullopt, train_ds, eval_ds, dense_cfg);

    const double train_top1 = train::evaluate(params.spec, dense.weights, train_ds).top1;
    const double eval_top1 = train::evaluate(params.spec, dense.weights, eval_ds).top1;
    result.dense_train_top1.push_back(train_top1);
    result.dense_eval_top1.push_back(eval_top1);

    auto [stats_pre, stats_post] = collect_both(params.spec, dense.weights, train_ds, "");

    for (size_t a = 0; a < result.arms.size(); ++a) {
      AblateArm& arm = result.arms[a];
      std::vector<NeuronScore> scores;
      if (arm.criterion == "variance") {
        scores = score_variance(arm.tap == "pre" ? stats_pre : stats_post, params.spec);
      } else {
        scores = score_random(params.spec, Rng::stream(seed, "random-arm").next_u64());
      }
      PruningPlan plan = global_select(scores, params.spec, params.rate, params.min_keep);
      plan.criterion = arm.criterion;
      plan.tap = arm.tap;
      // Compensation always consumes the post-activation means.
      ApplyResult pruned = apply_plan(params.spec, dense.weights, plan, stats_post,
                                      arm.mode == "shift" ? ShiftMode::shift
                                                          : ShiftMode::no_shift);
      const double top1 = train::evaluate(pruned.spec, pruned.weights, eval_ds).top1;
      arm.retention.push_back(eval_top1 > 0.0 ? top1 / eval_top1 : 0.0);

      if (params.with_final) {
        train::FinetuneConfig ft = params.finetune;
        ft.seed = seed;
        train::Teacher teacher{&params.spec, &dense.weights};
        auto tuned = train::finetune(pruned.spec, pruned.weights,
                                     ft.kd.enabled ? std::optional<train::Teacher>(teacher)
                                                   : std::nullopt,
                                     train_ds, eval_ds, ft);
        arm.final_top1.push_back(train::evaluate(pruned.spec, tuned.weights, eval_ds).top1);
      }
    }
  }
  return result;
}

}  // namespace vbp
