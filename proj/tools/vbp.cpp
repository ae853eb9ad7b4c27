// SPDX-License-Identifier: Apache-2.0
//
// vbp: variance-based MLP pruning pipeline as composable subcommands.
// Artifacts chain by content fingerprint (model -> stats -> plan -> pruned
// model); any stage fed a mismatched upstream file aborts with exit code 3.
// Exit codes: 0 ok, 1 usage, 2 format, 3 integrity, 4 numeric.

#include <cstdlib>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vbp/ablate.hpp"
#include "vbp/bench.hpp"
#include "vbp/compensate.hpp"
#include "vbp/csv.hpp"
#include "vbp/dataset.hpp"
#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"
#include "vbp/model.hpp"
#include "vbp/model_io.hpp"
#include "vbp/prune.hpp"
#include "vbp/stats.hpp"
#include "vbp/train.hpp"

namespace {

using namespace vbp;

int env_threads() {
  const char* v = std::getenv("VBP_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

char sep_of(const std::string& format) {
  if (format == "csv") return ',';
  if (format == "tsv") return '\t';
  throw UsageError("--format must be csv or tsv");
}

void emit_table(const Table& table, const std::string& out_path, const std::string& format) {
  const std::string text = table.dump(sep_of(format));
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

Dataset sliced(const Dataset& ds, size_t skip, long long take) {
  if (skip == 0 && take < 0) return ds;
  const size_t n = take < 0 ? ds.size() : static_cast<size_t>(take);
  Dataset out = ds.slice(skip, n);
  if (out.size() == 0) throw UsageError("dataset slice is empty");
  return out;
}

struct GenDataArgs {
  std::string out;
  size_t samples = 0, tokens = 9, dim = 32, classes = 4;
  uint64_t seed = 0;
  double separation = 2.0;
};

void cmd_gen_data(const GenDataArgs& a) {
  Dataset ds = gen_data(a.samples, a.tokens, a.dim, a.classes, a.seed, a.separation);
  const std::string fp = save_dataset_file(ds, a.out);
  std::cout << "wrote " << a.out << " (" << ds.size() << " samples, fingerprint " << fp << ")\n";
}

struct InitArgs {
  std::string out, preset;
  size_t blocks = 0, dim = 0, hid = 0, heads = 0, tokens = 0, classes = 0, patch_in = 0;
  uint64_t seed = 0;
  bool zeros = false;
};

void cmd_init(const InitArgs& a) {
  ModelSpec spec;
  const bool manual = a.blocks || a.dim || a.hid || a.heads || a.tokens || a.classes;
  if (!a.preset.empty() && manual) {
    throw UsageError("--preset conflicts with manual shape flags");
  }
  if (!a.preset.empty()) {
    spec = preset_spec(a.preset);
  } else if (manual) {
    if (!a.blocks || !a.dim || !a.hid || !a.tokens || !a.classes) {
      throw UsageError("manual shape needs --blocks --dim --hid --tokens --classes");
    }
    for (size_t i = 0; i < a.blocks; ++i) {
      spec.blocks.push_back({a.dim, a.heads, {a.dim, a.hid, a.dim}});
    }
    spec.num_tokens = a.tokens;
    spec.num_classes = a.classes;
    if (a.patch_in) spec.patch_embed = PatchEmbed{a.patch_in};
  } else {
    throw UsageError("give --preset or a manual shape");
  }
  spec.validate();
  WeightStore ws = init_weights(spec, a.seed, a.zeros);
  const std::string fp = save_model_file(spec, ws, a.out);
  std::cout << "wrote " << a.out << " (params " << count_params(spec) << ", macs "
            << count_macs(spec) << ", fingerprint " << fp << ")\n";
}

std::vector<NeuronRef> parse_neurons(const std::string& s) {
  std::vector<NeuronRef> refs;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("--hist-neurons wants layer:neuron pairs");
    refs.push_back({std::stoull(item.substr(0, colon)), std::stoull(item.substr(colon + 1))});
  }
  return refs;
}

struct StatsArgs {
  std::string model, data, tap = "post", out;
  size_t skip = 0;
  long long take = -1;
  int threads = 0;
  std::string var_dist, hist_out, hist_neurons, hist_range = "auto";
  int hist_bins = 32;
  std::string format = "csv";
};

void cmd_stats(const StatsArgs& a) {
  LoadedModel model = load_model_file(a.model);
  Dataset ds = sliced(load_dataset_file(a.data).data, a.skip, a.take);
  const int threads = a.threads > 0 ? a.threads : env_threads();
  StatsReport report = collect(model.spec, model.weights, ds, a.tap, model.fingerprint, threads);
  const std::string fp = save_stats_file(report, a.out);
  std::cout << "wrote " << a.out << " (tap " << a.tap << ", count " << report.layers[0].count
            << ", fingerprint " << fp << ")\n";

  if (!a.var_dist.empty()) {
    Table t;
    t.header = {"layer", "neuron_rank", "variance", "cumulative_fraction"};
    for (const VarDistRow& r : export_variance_distribution(report)) {
      t.rows.push_back({std::to_string(r.layer), std::to_string(r.neuron_rank),
                        fmt_g(r.variance), fmt_g(r.cumulative_fraction)});
    }
    emit_table(t, a.var_dist, a.format);
  }

  if (!a.hist_out.empty()) {
    const std::vector<NeuronRef> refs = parse_neurons(a.hist_neurons);
    auto traces = collect_traces(model.spec, model.weights, ds, refs);
    bool auto_range = a.hist_range == "auto";
    double lo = 0.0, hi = 0.0;
    if (!auto_range) {
      const auto colon = a.hist_range.find(':');
      if (colon == std::string::npos) throw UsageError("--hist-range wants 'auto' or lo:hi");
      lo = std::stod(a.hist_range.substr(0, colon));
      hi = std::stod(a.hist_range.substr(colon + 1));
    }
    Table t;
    t.header = {"layer", "neuron", "tap", "bin", "lo", "hi", "count"};
    for (const HistogramRow& r : histogram_rows(traces, a.hist_bins, auto_range, lo, hi)) {
      t.rows.push_back({std::to_string(r.layer), std::to_string(r.neuron), r.tap,
                        std::to_string(r.bin), fmt_g(r.lo), fmt_g(r.hi),
                        std::to_string(r.count)});
    }
    emit_table(t, a.hist_out, a.format);
  }
}

struct PruneArgs {
  std::string model, stats, criterion = "variance", mode = "shift";
  double rate = 0.5;
  size_t min_keep = 1;
  uint64_t seed = 0;
  std::string data;  // snip
  int batches = 4, batch_size = 32;
  std::string out, plan_out, record_out, summary;
  std::string format = "csv";
};

void cmd_prune(const PruneArgs& a) {
  LoadedModel model = load_model_file(a.model);
  LoadedStats stats = load_stats_file(a.stats);
  if (stats.report.model_fingerprint != model.fingerprint) {
    throw IntegrityError("stats " + a.stats + " were collected from model " +
                         stats.report.model_fingerprint + ", but " + a.model + " has fingerprint " +
                         model.fingerprint);
  }

  std::vector<NeuronScore> scores;
  if (a.criterion == "variance") {
    scores = score_variance(stats.report, model.spec);
  } else if (a.criterion == "magnitude") {
    scores = score_magnitude(model.spec, model.weights);
  } else if (a.criterion == "snip") {
    if (a.data.empty()) throw UsageError("snip scoring needs --data");
    Dataset ds = load_dataset_file(a.data).data;
    scores = score_snip(model.spec, model.weights, ds, a.batches, a.batch_size);
  } else if (a.criterion == "random") {
    scores = score_random(model.spec, a.seed);
  } else {
    throw UsageError("criterion must be variance, magnitude, snip, or random");
  }

  PruningPlan plan = global_select(scores, model.spec, a.rate, a.min_keep);
  plan.criterion = a.criterion;
  plan.tap = stats.report.tap;
  plan.stats_fingerprint = stats.fingerprint;
  if (a.criterion == "random") plan.seed = a.seed;
  if (plan.total_pruned() == 0) {
    std::cerr << "warning: empty plan (rate " << a.rate << " selects zero neurons)\n";
  }

  std::string plan_fp = fingerprint_bytes(serialize_plan(plan));
  if (!a.plan_out.empty()) plan_fp = save_plan_file(plan, a.plan_out);

  ApplyResult pruned = apply_plan(model.spec, model.weights, plan, stats.report,
                                  parse_shift_mode(a.mode), model.fingerprint, stats.fingerprint,
                                  plan_fp);
  const std::string fp = save_model_file(pruned.spec, pruned.weights, a.out);
  std::cout << "wrote " << a.out << " (pruned " << plan.total_pruned() << " neurons, params "
            << count_params(pruned.spec) << ", macs " << count_macs(pruned.spec)
            << ", fingerprint " << fp << ")\n";

  if (!a.record_out.empty()) save_record_file(pruned.record, a.record_out);
  if (!a.summary.empty()) {
    Table t;
    t.header = {"layer", "d_hid", "pruned", "fraction"};
    for (const PlanSummaryRow& r : plan_summary(plan, model.spec)) {
      t.rows.push_back({std::to_string(r.layer), std::to_string(r.d_hid),
                        std::to_string(r.pruned), fmt_g(r.fraction)});
    }
    emit_table(t, a.summary, a.format);
  }
}

struct EvalArgs {
  std::string model, data, out;
  size_t skip = 0;
  long long take = -1;
  std::string format = "csv";
};

void cmd_eval(const EvalArgs& a) {
  LoadedModel model = load_model_file(a.model);
  Dataset ds = sliced(load_dataset_file(a.data).data, a.skip, a.take);
  const train::EvalResult r = train::evaluate(model.spec, model.weights, ds);
  Table t;
  t.header = {"model", "params", "macs", "top1", "loss"};
  t.rows.push_back({model.fingerprint, std::to_string(count_params(model.spec)),
                    std::to_string(count_macs(model.spec)), fmt_g(r.top1), fmt_g(r.loss)});
  emit_table(t, a.out, a.format);
}

struct FinetuneArgs {
  std::string model, data, teacher, out, log;
  bool kd = false;
  double alpha = 0.5, temp = 2.0;
  int epochs = 10;
  double lr = 1e-3, wd = 0.01;
  bool paper_lr = false;
  int batch_size = 32;
  uint64_t seed = 0;
  double val_frac = 0.1;
  size_t skip = 0;
  long long take = -1;
  std::string format = "csv";
};

void cmd_finetune(const FinetuneArgs& a) {
  LoadedModel model = load_model_file(a.model);
  Dataset ds = sliced(load_dataset_file(a.data).data, a.skip, a.take);
  if (!(a.val_frac >= 0.0 && a.val_frac < 1.0)) throw UsageError("--val-frac must be in [0,1)");
  const size_t nval = static_cast<size_t>(a.val_frac * static_cast<double>(ds.size()));
  Dataset train_ds = ds.slice(0, ds.size() - nval);
  Dataset val_ds = ds.slice(ds.size() - nval, nval);

  std::optional<LoadedModel> teacher_model;
  std::optional<train::Teacher> teacher;
  if (a.kd) {
    if (a.teacher.empty()) throw UsageError("--kd needs --teacher");
    teacher_model = load_model_file(a.teacher);
    teacher = train::Teacher{&teacher_model->spec, &teacher_model->weights};
  }

  train::FinetuneConfig cfg;
  cfg.epochs = a.epochs;
  cfg.opt.lr = a.paper_lr ? 1.5e-5 : a.lr;
  cfg.opt.weight_decay = a.wd;
  cfg.batch_size = a.batch_size;
  cfg.kd.enabled = a.kd;
  cfg.kd.alpha = a.alpha;
  cfg.kd.temperature = a.temp;
  cfg.seed = a.seed;

  auto result = train::finetune(model.spec, model.weights, teacher, train_ds, val_ds, cfg);
  const std::string fp = save_model_file(model.spec, result.weights, a.out);
  std::cout << "wrote " << a.out << " (fingerprint " << fp << ")\n";

  if (!a.log.empty()) {
    Table t;
    t.header = {"epoch", "lr", "train_loss", "val_top1", "wall_seconds"};
    for (const train::EpochLog& e : result.log) {
      t.rows.push_back({std::to_string(e.epoch), fmt_g(e.lr), fmt_g(e.train_loss),
                        fmt_g(e.val_top1), fmt_g(e.wall_seconds)});
    }
    emit_table(t, a.log, a.format);
  }
}

struct BenchArgs {
  std::string model, compare, out;
  size_t batch = 8;
  int warmup = 2, runs = 9, threads = 1;
  uint64_t seed = 0;
  std::string format = "csv";
};

void cmd_bench(const BenchArgs& a) {
  set_max_threads(a.threads);
  LoadedModel model = load_model_file(a.model);
  const LatencyResult base = bench_latency(model.spec, model.weights, a.batch, a.warmup, a.runs,
                                           a.seed);
  Table t;
  t.header = {"model", "threads", "batch", "median_ms", "p10_ms", "p90_ms", "speedup"};
  t.rows.push_back({model.fingerprint, std::to_string(a.threads), std::to_string(a.batch),
                    fmt_g(base.median_ms), fmt_g(base.p10_ms), fmt_g(base.p90_ms), "1"});
  if (!a.compare.empty()) {
    LoadedModel other = load_model_file(a.compare);
    const LatencyResult r = bench_latency(other.spec, other.weights, a.batch, a.warmup, a.runs,
                                          a.seed);
    t.rows.push_back({other.fingerprint, std::to_string(a.threads), std::to_string(a.batch),
                      fmt_g(r.median_ms), fmt_g(r.p10_ms), fmt_g(r.p90_ms),
                      fmt_g(base.median_ms / r.median_ms)});
  }
  emit_table(t, a.out, a.format);
}

struct SweepArgs {
  std::string model, stats, data, rates = "0.1,0.2,0.3,0.4,0.5,0.6,0.7";
  std::string criterion = "variance", mode = "shift";
  uint64_t seed = 0;
  size_t min_keep = 1;
  size_t eval_skip = 0;
  long long eval_take = -1;
  size_t train_skip = 0;
  long long train_take = -1;
  bool finetune = false;
  int ft_epochs = 10;
  double ft_lr = 1e-3;
  bool kd = true;
  double alpha = 0.5, temp = 2.0;
  int batch_size = 32;
  std::string out;
  std::string format = "csv";
};

void cmd_sweep(const SweepArgs& a) {
  LoadedModel model = load_model_file(a.model);
  LoadedStats stats = load_stats_file(a.stats);
  if (stats.report.model_fingerprint != model.fingerprint) {
    throw IntegrityError("stats were collected from a different model (fingerprints " +
                         stats.report.model_fingerprint + " vs " + model.fingerprint + ")");
  }
  Dataset full = load_dataset_file(a.data).data;
  Dataset eval_ds = sliced(full, a.eval_skip, a.eval_take);
  Dataset train_ds = sliced(full, a.train_skip, a.train_take);

  std::vector<double> rates;
  std::stringstream ss(a.rates);
  std::string item;
  while (std::getline(ss, item, ',')) rates.push_back(std::stod(item));

  SweepOptions opt;
  opt.criterion = a.criterion;
  opt.mode = parse_shift_mode(a.mode);
  opt.criterion_seed = a.seed;
  opt.min_keep = a.min_keep;
  if (a.finetune) {
    train::FinetuneConfig cfg;
    cfg.epochs = a.ft_epochs;
    cfg.opt.lr = a.ft_lr;
    cfg.batch_size = a.batch_size;
    cfg.kd.enabled = a.kd;
    cfg.kd.alpha = a.alpha;
    cfg.kd.temperature = a.temp;
    cfg.seed = a.seed;
    opt.finetune = cfg;
  }

  const auto rows = sweep(model.spec, model.weights, stats.report, rates, eval_ds,
                          a.finetune ? &train_ds : nullptr, opt);
  Table t;
  t.header = {"rate", "macs", "params", "retention", "final"};
  for (const SweepRow& r : rows) {
    t.rows.push_back({fmt_g(r.rate), std::to_string(r.macs), std::to_string(r.params),
                      fmt_g(r.retention), r.final_top1 ? fmt_g(*r.final_top1) : ""});
  }
  emit_table(t, a.out, a.format);
}

struct AblateArgs {
  size_t samples = 768, tokens = 9, dim = 32, classes = 4, blocks = 2, hid = 128, heads = 4;
  double separation = 2.0;
  int seeds = 5;
  uint64_t seed = 1;
  double rate = 0.5;
  int train_epochs = 30;
  double train_lr = 1e-3;
  int batch_size = 32;
  bool final_col = false;
  int ft_epochs = 10;
  double ft_lr = 1e-3, alpha = 0.5, temp = 2.0;
  std::string out;
  std::string format = "csv";
};

void cmd_ablate(const AblateArgs& a) {
  AblateParams p = default_ablate_params();
  p.spec.blocks.assign(a.blocks, {a.dim, a.heads, {a.dim, a.hid, a.dim}});
  p.spec.num_tokens = a.tokens;
  p.spec.num_classes = a.classes;
  p.samples = a.samples;
  p.tokens = a.tokens;
  p.dim = a.dim;
  p.classes = a.classes;
  p.separation = a.separation;
  p.seeds = a.seeds;
  p.base_seed = a.seed;
  p.rate = a.rate;
  p.train_epochs = a.train_epochs;
  p.train_lr = a.train_lr;
  p.batch_size = a.batch_size;
  p.with_final = a.final_col;
  p.finetune.epochs = a.ft_epochs;
  p.finetune.opt.lr = a.ft_lr;
  p.finetune.kd.enabled = true;
  p.finetune.kd.alpha = a.alpha;
  p.finetune.kd.temperature = a.temp;

  const AblateResult r = run_ablate(p);
  Table t;
  t.header = {"criterion", "mode", "tap", "mean_retention", "std_retention", "mean_final"};
  for (const AblateArm& arm : r.arms) {
    t.rows.push_back({arm.criterion, arm.mode, arm.tap, fmt_g(arm.mean_retention()),
                      fmt_g(arm.std_retention()),
                      arm.final_top1.empty() ? "" : fmt_g(arm.mean_final())});
  }
  double train_mean = 0.0, eval_mean = 0.0;
  for (double v : r.dense_train_top1) train_mean += v;
  for (double v : r.dense_eval_top1) eval_mean += v;
  train_mean /= r.dense_train_top1.size();
  eval_mean /= r.dense_eval_top1.size();
  std::cerr << "dense train top1 " << fmt_g(train_mean) << ", eval top1 " << fmt_g(eval_mean)
            << " (mean over " << a.seeds << " seeds)\n";
  emit_table(t, a.out, a.format);
}

struct ReportArgs {
  std::vector<std::string> evals, sweeps, logs;
  std::string dense;
  std::string out;
  std::string format = "csv";
};

std::pair<std::string, std::string> split_label(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw UsageError("expected label=path, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<std::vector<std::string>> read_table(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, sep)) cells.push_back(cell);
    rows.push_back(cells);
  }
  if (rows.empty()) throw FormatError("empty table: " + path);
  return rows;
}

size_t column_of(const std::vector<std::string>& header, const std::string& name,
                 const std::string& path) {
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("table " + path + " has no column '" + name + "'");
}

void cmd_report(const ReportArgs& a) {
  struct EvalRow {
    std::string label, macs, params, top1;
  };
  std::vector<EvalRow> evals;
  for (const std::string& spec : a.evals) {
    auto [label, path] = split_label(spec);
    const auto rows = read_table(path);
    const size_t c_macs = column_of(rows[0], "macs", path);
    const size_t c_params = column_of(rows[0], "params", path);
    const size_t c_top1 = column_of(rows[0], "top1", path);
    evals.push_back({label, rows[1][c_macs], rows[1][c_params], rows[1][c_top1]});
  }
  double dense_top1 = 0.0;
  for (const EvalRow& e : evals) {
    if (e.label == a.dense) dense_top1 = std::stod(e.top1);
  }
  std::map<std::string, double> finals;
  for (const std::string& spec : a.logs) {
    auto [label, path] = split_label(spec);
    const auto rows = read_table(path);
    const size_t c = column_of(rows[0], "val_top1", path);
    double best = 0.0;
    for (size_t i = 1; i < rows.size(); ++i) best = std::max(best, std::stod(rows[i][c]));
    finals[label] = best;
  }

  Table t;
  t.header = {"label", "macs", "params", "retention", "final"};
  for (const EvalRow& e : evals) {
    std::string retention;
    if (dense_top1 > 0.0 && e.label != a.dense) {
      retention = fmt_g(std::stod(e.top1) / dense_top1);
    }
    std::string fin = finals.count(e.label) ? fmt_g(finals[e.label]) : e.top1;
    t.rows.push_back({e.label, e.macs, e.params, retention, fin});
  }
  for (const std::string& spec : a.sweeps) {
    auto [label, path] = split_label(spec);
    const auto rows = read_table(path);
    const size_t c_rate = column_of(rows[0], "rate", path);
    const size_t c_macs = column_of(rows[0], "macs", path);
    const size_t c_params = column_of(rows[0], "params", path);
    const size_t c_ret = column_of(rows[0], "retention", path);
    const size_t c_fin = column_of(rows[0], "final", path);
    for (size_t i = 1; i < rows.size(); ++i) {
      t.rows.push_back({label + ":" + rows[i][c_rate], rows[i][c_macs], rows[i][c_params],
                        rows[i][c_ret], c_fin < rows[i].size() ? rows[i][c_fin] : ""});
    }
  }
  emit_table(t, a.out, a.format);
}

void add_format(CLI::App* cmd, std::string* fmt) {
  cmd->add_option("--format", *fmt, "output table format: csv or tsv")
      ->check(CLI::IsMember({"csv", "tsv"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variance-based MLP pruning toolkit"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gd = app.add_subcommand("gen-data", "generate a synthetic VBPD dataset");
  c_gd->add_option("--out", gd.out)->required();
  c_gd->add_option("--samples", gd.samples)->required();
  c_gd->add_option("--tokens", gd.tokens);
  c_gd->add_option("--dim", gd.dim);
  c_gd->add_option("--classes", gd.classes);
  c_gd->add_option("--seed", gd.seed);
  c_gd->add_option("--separation", gd.separation);

  InitArgs in;
  auto* c_in = app.add_subcommand("init", "create a VBPM model file");
  c_in->add_option("--out", in.out)->required();
  c_in->add_option("--preset", in.preset, "toy|deit-tiny|deit-small|deit-base");
  c_in->add_option("--blocks", in.blocks);
  c_in->add_option("--dim", in.dim);
  c_in->add_option("--hid", in.hid);
  c_in->add_option("--heads", in.heads);
  c_in->add_option("--tokens", in.tokens);
  c_in->add_option("--classes", in.classes);
  c_in->add_option("--patch-in", in.patch_in, "patch-embedding input features");
  c_in->add_option("--seed", in.seed);
  c_in->add_flag("--zeros", in.zeros, "shape-only zero weights for accounting");

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "collect activation statistics");
  c_st->add_option("--model", st.model)->required();
  c_st->add_option("--data", st.data)->required();
  c_st->add_option("--tap", st.tap)->check(CLI::IsMember({"pre", "post"}));
  c_st->add_option("--out", st.out)->required();
  c_st->add_option("--skip", st.skip);
  c_st->add_option("--take", st.take);
  c_st->add_option("--threads", st.threads, "shard count (default: VBP_THREADS)");
  c_st->add_option("--var-dist", st.var_dist, "write variance distribution CSV");
  c_st->add_option("--hist-out", st.hist_out, "write pre/post histograms CSV");
  c_st->add_option("--hist-neurons", st.hist_neurons, "layer:neuron,...");
  c_st->add_option("--hist-bins", st.hist_bins);
  c_st->add_option("--hist-range", st.hist_range, "auto or lo:hi");
  add_format(c_st, &st.format);

  PruneArgs pr;
  auto* c_pr = app.add_subcommand("prune", "score, select, compensate, compact");
  c_pr->add_option("--model", pr.model)->required();
  c_pr->add_option("--stats", pr.stats)->required();
  c_pr->add_option("--rate", pr.rate)->required();
  c_pr->add_option("--criterion", pr.criterion)
      ->check(CLI::IsMember({"variance", "magnitude", "snip", "random"}));
  c_pr->add_option("--mode", pr.mode)->check(CLI::IsMember({"shift", "no-shift"}));
  c_pr->add_option("--min-keep", pr.min_keep);
  c_pr->add_option("--seed", pr.seed, "random criterion seed");
  c_pr->add_option("--data", pr.data, "labeled dataset (snip)");
  c_pr->add_option("--batches", pr.batches, "snip batches");
  c_pr->add_option("--batch-size", pr.batch_size, "snip batch size");
  c_pr->add_option("--out", pr.out)->required();
  c_pr->add_option("--plan-out", pr.plan_out);
  c_pr->add_option("--record-out", pr.record_out, "compensation record sidecar");
  c_pr->add_option("--summary", pr.summary, "per-layer plan summary CSV");
  add_format(c_pr, &pr.format);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "top-1 accuracy and loss");
  c_ev->add_option("--model", ev.model)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--skip", ev.skip);
  c_ev->add_option("--take", ev.take);
  c_ev->add_option("-o,--out", ev.out, "default: stdout");
  add_format(c_ev, &ev.format);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "AdamW + cosine fine-tuning");
  c_ft->add_option("--model", ft.model)->required();
  c_ft->add_option("--data", ft.data)->required();
  c_ft->add_option("--teacher", ft.teacher, "dense teacher model");
  c_ft->add_flag("--kd", ft.kd, "distill from the teacher");
  c_ft->add_option("--alpha", ft.alpha);
  c_ft->add_option("--temp", ft.temp);
  c_ft->add_option("--epochs", ft.epochs);
  c_ft->add_option("--lr", ft.lr);
  c_ft->add_flag("--paper-lr", ft.paper_lr, "use lr 1.5e-5");
  c_ft->add_option("--wd", ft.wd);
  c_ft->add_option("--batch-size", ft.batch_size);
  c_ft->add_option("--seed", ft.seed);
  c_ft->add_option("--val-frac", ft.val_frac);
  c_ft->add_option("--skip", ft.skip);
  c_ft->add_option("--take", ft.take);
  c_ft->add_option("--out", ft.out)->required();
  c_ft->add_option("--log", ft.log, "epoch log CSV");
  add_format(c_ft, &ft.format);

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "forward latency");
  c_be->add_option("--model", be.model)->required();
  c_be->add_option("--compare", be.compare, "second model; emits speedup vs --model");
  c_be->add_option("--batch", be.batch);
  c_be->add_option("--warmup", be.warmup);
  c_be->add_option("--runs", be.runs);
  c_be->add_option("--threads", be.threads);
  c_be->add_option("--seed", be.seed);
  c_be->add_option("-o,--out", be.out);
  add_format(c_be, &be.format);

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "pruning-rate sensitivity");
  c_sw->add_option("--model", sw.model)->required();
  c_sw->add_option("--stats", sw.stats)->required();
  c_sw->add_option("--data", sw.data)->required();
  c_sw->add_option("--rates", sw.rates);
  c_sw->add_option("--criterion", sw.criterion)
      ->check(CLI::IsMember({"variance", "magnitude", "random"}));
  c_sw->add_option("--mode", sw.mode)->check(CLI::IsMember({"shift", "no-shift"}));
  c_sw->add_option("--seed", sw.seed);
  c_sw->add_option("--min-keep", sw.min_keep);
  c_sw->add_option("--eval-skip", sw.eval_skip);
  c_sw->add_option("--eval-take", sw.eval_take);
  c_sw->add_option("--train-skip", sw.train_skip);
  c_sw->add_option("--train-take", sw.train_take);
  c_sw->add_flag("--finetune", sw.finetune, "also fine-tune each pruned model");
  c_sw->add_option("--ft-epochs", sw.ft_epochs);
  c_sw->add_option("--ft-lr", sw.ft_lr);
  c_sw->add_flag("--kd,!--no-kd", sw.kd, "distill from the dense model");
  c_sw->add_option("--alpha", sw.alpha);
  c_sw->add_option("--temp", sw.temp);
  c_sw->add_option("--batch-size", sw.batch_size);
  c_sw->add_option("-o,--out", sw.out);
  add_format(c_sw, &sw.format);

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "criterion/compensation/tap ablation grid");
  c_ab->add_option("--samples", ab.samples);
  c_ab->add_option("--tokens", ab.tokens);
  c_ab->add_option("--dim", ab.dim);
  c_ab->add_option("--classes", ab.classes);
  c_ab->add_option("--blocks", ab.blocks);
  c_ab->add_option("--hid", ab.hid);
  c_ab->add_option("--heads", ab.heads);
  c_ab->add_option("--separation", ab.separation);
  c_ab->add_option("--seeds", ab.seeds);
  c_ab->add_option("--seed", ab.seed, "base seed");
  c_ab->add_option("--rate", ab.rate);
  c_ab->add_option("--train-epochs", ab.train_epochs);
  c_ab->add_option("--train-lr", ab.train_lr);
  c_ab->add_option("--batch-size", ab.batch_size);
  c_ab->add_flag("--final", ab.final_col, "fine-tune every arm");
  c_ab->add_option("--ft-epochs", ab.ft_epochs);
  c_ab->add_option("--ft-lr", ab.ft_lr);
  c_ab->add_option("--alpha", ab.alpha);
  c_ab->add_option("--temp", ab.temp);
  c_ab->add_option("-o,--out", ab.out);
  add_format(c_ab, &ab.format);

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "join eval/sweep/log tables");
  c_rp->add_option("--eval", rp.evals, "label=eval.csv (repeatable)");
  c_rp->add_option("--sweep", rp.sweeps, "label=sweep.csv (repeatable)");
  c_rp->add_option("--log", rp.logs, "label=log.csv (repeatable)");
  c_rp->add_option("--dense", rp.dense, "label of the dense baseline eval");
  c_rp->add_option("-o,--out", rp.out);
  add_format(c_rp, &rp.format);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_max_threads(env_threads());
    if (c_gd->parsed()) cmd_gen_data(gd);
    if (c_in->parsed()) cmd_init(in);
    if (c_st->parsed()) cmd_stats(st);
    if (c_pr->parsed()) cmd_prune(pr);
    if (c_ev->parsed()) cmd_eval(ev);
    if (c_ft->parsed()) cmd_finetune(ft);
    if (c_be->parsed()) cmd_bench(be);
    if (c_sw->parsed()) cmd_sweep(sw);
    if (c_ab->parsed()) cmd_ablate(ab);
    if (c_rp->parsed()) cmd_report(rp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
