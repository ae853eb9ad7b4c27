// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale evaluation and fine-tuning. The trainer runs a float64 engine
// (weights are converted in, optimized, and rounded back to f32 on return):
// the hand-coded backward pass is validated against central finite
// differences, which needs 64-bit loss evaluation. Everything is
// single-writer and deterministic for a fixed seed.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbp/dataset.hpp"
#include "vbp/model.hpp"

namespace vbp {
namespace train {

struct Mat {
  size_t rows = 0, cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(size_t r, size_t c) : rows(r), cols(c), d(r * c, 0.0) {}
  double* row(size_t i) { return d.data() + i * cols; }
  const double* row(size_t i) const { return d.data() + i * cols; }
  double& at(size_t i, size_t j) { return d[i * cols + j]; }
  double at(size_t i, size_t j) const { return d[i * cols + j]; }
};

using ParamMap = std::map<std::string, Mat>;

ParamMap to_params(const ModelSpec& spec, const WeightStore& weights);
WeightStore to_weights(const ModelSpec& spec, const ParamMap& params);

struct KdConfig {
  bool enabled = false;
  double alpha = 0.5;
  double temperature = 2.0;
};

struct AdamWConfig {
  double lr = 1e-3;  // desk-scale default; pass 1.5e-5 to mirror large-scale runs
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct FinetuneConfig {
  int epochs = 10;
  AdamWConfig opt;
  int batch_size = 32;
  KdConfig kd;
  uint64_t seed = 0;
};

// (1-alpha)*CE(student, labels) + alpha*T^2*KL(softmax(teacher/T) || softmax(student/T)),
// batch-averaged. Returns the scalar; grad is d(loss)/d(student logits).
double kd_loss(const Mat& student_logits, const Mat& teacher_logits,
               std::span<const uint32_t> labels, double alpha, double temperature);
Mat kd_loss_grad(const Mat& student_logits, const Mat& teacher_logits,
                 std::span<const uint32_t> labels, double alpha, double temperature);

// Loss over the given sample indices; when `grads` is non-null, accumulates
// d(loss)/d(param) for every parameter (grads is cleared first).
// teacher_logits, when present, has one row per dataset sample.
double loss_and_grads(const ModelSpec& spec, const ParamMap& params, const Dataset& ds,
                      std::span<const size_t> indices, const Mat* teacher_logits,
                      const KdConfig& kd, ParamMap* grads);

// Double-engine logits for a batch of dataset samples, one row per index.
Mat logits_f64(const ModelSpec& spec, const ParamMap& params, const Dataset& ds,
               std::span<const size_t> indices);

struct EvalResult {
  double top1 = 0.0;
  double loss = 0.0;
};

// f32-engine evaluation: argmax accuracy and mean cross-entropy.
EvalResult evaluate(const ModelSpec& spec, const WeightStore& weights, const Dataset& ds);

// lr(0) == lr0, lr(last) == 0; cosine in between.
double cosine_lr(double lr0, size_t step, size_t total_steps);

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double wall_seconds = 0.0;
};

struct Teacher {
  const ModelSpec* spec = nullptr;
  const WeightStore* weights = nullptr;
};

struct FinetuneResult {
  WeightStore weights;  // best val_top1 epoch
  std::vector<EpochLog> log;
};

FinetuneResult finetune(const ModelSpec& spec, const WeightStore& weights,
                        std::optional<Teacher> teacher, const Dataset& train_ds,
                        const Dataset& val_ds, const FinetuneConfig& config);

}  // namespace train
}  // namespace vbp
