// SPDX-License-Identifier: Apache-2.0
//
// Trainer tests. The backward pass is validated parameter-by-parameter
// against central finite differences (step 1e-3, float64 loss evaluation).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "vbp/dataset.hpp"
#include "vbp/error.hpp"
#include "vbp/model.hpp"
#include "vbp/rng.hpp"
#include "vbp/train.hpp"

using namespace vbp;
using train::FinetuneConfig;
using train::KdConfig;
using train::Mat;
using train::ParamMap;

namespace {

void fd_check_all(const ModelSpec& spec, ParamMap& params, const Dataset& ds,
                  const std::vector<size_t>& idx, const Mat* teacher, const KdConfig& kd,
                  double tol, double h = 1e-3) {
  ParamMap grads;
  train::loss_and_grads(spec, params, ds, idx, teacher, kd, &grads);
  for (auto& [name, p] : params) {
    const Mat& g = grads.at(name);
    for (size_t i = 0; i < p.d.size(); ++i) {
      const double keep = p.d[i];
      p.d[i] = keep + h;
      const double up = train::loss_and_grads(spec, params, ds, idx, teacher, kd, nullptr);
      p.d[i] = keep - h;
      const double dn = train::loss_and_grads(spec, params, ds, idx, teacher, kd, nullptr);
      p.d[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(g.d[i])});
      INFO(name << "[" << i << "]: analytic " << g.d[i] << " fd " << fd);
      CHECK(std::abs(g.d[i] - fd) / denom <= tol);
    }
  }
}

Dataset micro_data(size_t samples, size_t tokens, size_t dim, size_t classes, uint64_t seed,
                   double sep) {
  return gen_data(samples, tokens, dim, classes, seed, sep);
}

}  // namespace

TEST_CASE("evaluate on a perfect and a uniform model") {
  ModelSpec spec;
  spec.blocks.push_back({4, 0, {4, 4, 4}});
  spec.num_tokens = 1;
  spec.num_classes = 4;

  // Identity pipe: one-hot inputs keep their argmax through gelu and the head.
  WeightStore perfect = init_weights(spec, 1, /*zeros=*/true);
  for (size_t i = 0; i < 4; ++i) {
    perfect.get("block.0.mlp.w1").at(i, i) = 1.0f;
    perfect.get("block.0.mlp.w2").at(i, i) = 1.0f;
    perfect.get("head.weight").at(i, i) = 1.0f;
  }
  Dataset onehot;
  onehot.tokens = 1;
  onehot.dim = 4;
  onehot.classes = 4;
  for (uint32_t i = 0; i < 40; ++i) {
    Tensor f({1, 4});
    f.data[i % 4] = 1.0f;
    onehot.features.push_back(f);
    onehot.labels.push_back(i % 4);
  }
  CHECK(train::evaluate(spec, perfect, onehot).top1 == doctest::Approx(1.0));

  // With all-zero weights every logit is 0: uniform prediction, argmax = 0.
  WeightStore ws = init_weights(spec, 1, /*zeros=*/true);
  Dataset ds = micro_data(400, 1, 4, 4, 5, 0.0);
  const train::EvalResult uniform = train::evaluate(spec, ws, ds);
  // balanced labels: class 0 is a quarter of the data
  CHECK(uniform.top1 == doctest::Approx(0.25));
  CHECK(uniform.loss == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  Dataset empty;
  empty.tokens = 1;
  empty.dim = 4;
  empty.classes = 4;
  CHECK_THROWS_AS(train::evaluate(spec, ws, empty), UsageError);
}

TEST_CASE("kd_loss limits") {
  Mat student(2, 3), teacher(2, 3);
  const double vals[6] = {0.3, -1.2, 0.8, 2.0, 0.1, -0.5};
  for (size_t i = 0; i < 6; ++i) {
    student.d[i] = vals[i];
    teacher.d[i] = vals[i];
  }
  const std::vector<uint32_t> labels = {2, 0};

  // alpha=0: plain cross-entropy
  const double ce = train::kd_loss(student, teacher, labels, 0.0, 2.0);
  double want = 0.0;
  for (size_t b = 0; b < 2; ++b) {
    double mx = -1e300, sum = 0.0;
    for (size_t c = 0; c < 3; ++c) mx = std::max(mx, student.at(b, c));
    for (size_t c = 0; c < 3; ++c) sum += std::exp(student.at(b, c) - mx);
    want += std::log(sum) + mx - student.at(b, labels[b]);
  }
  CHECK(ce == doctest::Approx(want / 2.0).epsilon(1e-12));

  // student == teacher, alpha=1: KL term vanishes
  CHECK(train::kd_loss(student, teacher, labels, 1.0, 2.0) == doctest::Approx(0.0));

  Mat wrong(1, 3);
  CHECK_THROWS_AS(train::kd_loss(student, wrong, labels, 0.5, 2.0), DimensionError);
}

TEST_CASE("kd_loss gradient matches finite differences within 1e-4") {
  Rng rng(31);
  Mat student(2, 3), teacher(2, 3);
  for (double& v : student.d) v = rng.gaussian();
  for (double& v : teacher.d) v = rng.gaussian();
  const std::vector<uint32_t> labels = {1, 2};
  const double alpha = 0.5, temp = 2.0;
  Mat g = train::kd_loss_grad(student, teacher, labels, alpha, temp);
  const double h = 1e-4;
  for (size_t i = 0; i < student.d.size(); ++i) {
    const double keep = student.d[i];
    student.d[i] = keep + h;
    const double up = train::kd_loss(student, teacher, labels, alpha, temp);
    student.d[i] = keep - h;
    const double dn = train::kd_loss(student, teacher, labels, alpha, temp);
    student.d[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    CHECK(std::abs(g.d[i] - fd) / std::max({1e-6, std::abs(fd), std::abs(g.d[i])}) <= 1e-4);
  }
}

TEST_CASE("backward matches finite differences on a 2-block micro transformer") {
  ModelSpec spec;
  spec.blocks.push_back({8, 2, {8, 6, 8}});
  spec.blocks.push_back({8, 2, {8, 6, 8}});
  spec.num_tokens = 3;
  spec.num_classes = 3;
  WeightStore ws = init_weights(spec, 77);
  ParamMap params = train::to_params(spec, ws);
  Dataset ds = micro_data(4, 3, 8, 3, 9, 1.5);
  std::vector<size_t> idx = {0, 1, 2, 3};
  KdConfig kd;
  fd_check_all(spec, params, ds, idx, nullptr, kd, 1e-3);
}

TEST_CASE("backward matches finite differences with distillation enabled") {
  ModelSpec spec;
  spec.blocks.push_back({4, 2, {4, 5, 4}});
  spec.num_tokens = 2;
  spec.num_classes = 3;
  WeightStore ws = init_weights(spec, 3);
  ParamMap params = train::to_params(spec, ws);
  Dataset ds = micro_data(3, 2, 4, 3, 5, 1.0);
  Mat teacher(3, 3);
  Rng rng(17);
  for (double& v : teacher.d) v = rng.gaussian();
  std::vector<size_t> idx = {0, 1, 2};
  KdConfig kd;
  kd.enabled = true;
  kd.alpha = 0.5;
  kd.temperature = 2.0;
  fd_check_all(spec, params, ds, idx, &teacher, kd, 1e-3);
}

TEST_CASE("backward matches finite differences with a patch embedding") {
  ModelSpec spec;
  spec.blocks.push_back({6, 2, {6, 4, 6}});
  spec.num_tokens = 3;  // class token + 2 patches
  spec.num_classes = 2;
  spec.patch_embed = PatchEmbed{5};
  WeightStore ws = init_weights(spec, 13);
  ParamMap params = train::to_params(spec, ws);
  Dataset ds = micro_data(3, 2, 5, 2, 11, 1.0);
  std::vector<size_t> idx = {0, 1, 2};
  KdConfig kd;
  // finer step: the patch-path gradients are ~1e-4 and h=1e-3 truncation
  // noise would dominate the relative comparison
  fd_check_all(spec, params, ds, idx, nullptr, kd, 1e-3, 1e-4);
}

TEST_CASE("backward matches finite differences on an MLP-only stack") {
  ModelSpec spec;
  spec.blocks.push_back({5, 0, {5, 7, 5}});
  spec.blocks.push_back({5, 0, {5, 6, 5}});
  spec.num_tokens = 2;
  spec.num_classes = 3;
  WeightStore ws = init_weights(spec, 21);
  ParamMap params = train::to_params(spec, ws);
  Dataset ds = micro_data(4, 2, 5, 3, 7, 1.0);
  std::vector<size_t> idx = {0, 1, 2, 3};
  KdConfig kd;
  fd_check_all(spec, params, ds, idx, nullptr, kd, 1e-3);
}

TEST_CASE("cosine schedule endpoints") {
  const double lr0 = 3e-4;
  CHECK(train::cosine_lr(lr0, 0, 100) == doctest::Approx(lr0));
  CHECK(train::cosine_lr(lr0, 99, 100) <= 1e-3 * lr0);
  CHECK(train::cosine_lr(lr0, 50, 100) == doctest::Approx(lr0 * 0.5).epsilon(0.05));
  CHECK(train::cosine_lr(lr0, 0, 1) == doctest::Approx(lr0));
}

TEST_CASE("lr=0 leaves weights bitwise unchanged") {
  ModelSpec spec = preset_spec("toy");
  WeightStore ws = init_weights(spec, 5);
  Dataset ds = micro_data(32, 9, 32, 4, 3, 2.0);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.opt.lr = 0.0;
  cfg.batch_size = 16;
  auto out = train::finetune(spec, ws, std::nullopt, ds, ds.slice(0, 8), cfg);
  for (const auto& [name, t] : ws.tensors) {
    CHECK(out.weights.get(name).data == t.data);
  }
}

TEST_CASE("training loss decreases epoch over epoch on separable data") {
  ModelSpec spec;
  spec.blocks.push_back({8, 0, {8, 16, 8}});
  spec.num_tokens = 1;
  spec.num_classes = 2;
  WeightStore ws = init_weights(spec, 12);
  Dataset ds = micro_data(128, 1, 8, 2, 4, 3.0);
  FinetuneConfig cfg;
  cfg.epochs = 5;
  cfg.opt.lr = 2e-3;
  cfg.batch_size = 32;
  cfg.seed = 1;
  auto out = train::finetune(spec, ws, std::nullopt, ds.slice(0, 96), ds.slice(96, 32), cfg);
  REQUIRE(out.log.size() == 5);
  for (size_t e = 1; e < out.log.size(); ++e) {
    CHECK(out.log[e].train_loss < out.log[e - 1].train_loss);
  }
  CHECK(out.log.front().lr == doctest::Approx(2e-3));
}

TEST_CASE("identical seeds reproduce identical runs bitwise") {
  ModelSpec spec = preset_spec("toy");
  WeightStore ws = init_weights(spec, 5);
  Dataset ds = micro_data(64, 9, 32, 4, 3, 2.0);
  FinetuneConfig cfg;
  cfg.epochs = 3;
  cfg.opt.lr = 1e-3;
  cfg.batch_size = 32;
  cfg.seed = 42;
  auto a = train::finetune(spec, ws, std::nullopt, ds.slice(0, 48), ds.slice(48, 16), cfg);
  auto b = train::finetune(spec, ws, std::nullopt, ds.slice(0, 48), ds.slice(48, 16), cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_top1 == b.log[e].val_top1);
  }
  for (const auto& [name, t] : a.weights.tensors) {
    CHECK(b.weights.get(name).data == t.data);
  }
}

TEST_CASE("finetune usage errors") {
  ModelSpec spec = preset_spec("toy");
  WeightStore ws = init_weights(spec, 5);
  Dataset ds = micro_data(16, 9, 32, 4, 3, 2.0);
  FinetuneConfig cfg;
  cfg.kd.enabled = true;
  CHECK_THROWS_AS(train::finetune(spec, ws, std::nullopt, ds, ds, cfg), UsageError);

  ModelSpec other = spec;
  other.num_classes = 7;
  WeightStore ows = init_weights(other, 5);
  train::Teacher teacher{&other, &ows};
  CHECK_THROWS_AS(train::finetune(spec, ws, teacher, ds, ds, cfg), UsageError);
}
