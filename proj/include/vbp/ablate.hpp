// SPDX-License-Identifier: Apache-2.0
//
// Self-contained toy ablation harness: per seed it generates separable
// synthetic data, trains a dense toy transformer, collects both tap
// locations in one pass, and measures retention (and optionally fine-tuned
// accuracy) for each {criterion, compensation, tap} arm.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vbp/model.hpp"
#include "vbp/train.hpp"

namespace vbp {

struct AblateParams {
  ModelSpec spec;            // defaults to the toy preset
  size_t samples = 768;      // generated per seed; 2/3 train, 1/3 eval
  size_t tokens = 9;
  size_t dim = 32;
  size_t classes = 4;
  double separation = 2.0;
  int seeds = 5;
  uint64_t base_seed = 1;
  double rate = 0.5;
  size_t min_keep = 1;
  int train_epochs = 30;     // dense training from scratch
  double train_lr = 1e-3;
  int batch_size = 32;
  bool with_final = false;   // fine-tune every arm
  train::FinetuneConfig finetune;  // used when with_final
};

struct AblateArm {
  std::string criterion;  // variance | random
  std::string mode;       // shift | no-shift
  std::string tap;        // pre | post (scoring tap)
  std::vector<double> retention;   // per seed
  std::vector<double> final_top1;  // per seed, when with_final

  double mean_retention() const;
  double std_retention() const;
  double mean_final() const;
};

struct AblateResult {
  std::vector<double> dense_train_top1;  // per seed
  std::vector<double> dense_eval_top1;
  std::vector<AblateArm> arms;  // (variance,shift,post), (random,shift,post),
                                // (variance,no-shift,post), (random,no-shift,post),
                                // (variance,shift,pre)
};

AblateResult run_ablate(const AblateParams& params);

AblateParams default_ablate_params();

}  // namespace vbp
