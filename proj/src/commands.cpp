#include "kdar/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "kdar/error.hpp"

namespace kdar {

namespace fs = std::filesystem;

namespace {

const char* const kPreparedFiles[] = {"train.txt", "test.txt", "kg.txt", "stats.txt"};
const char* const kIdMaps[] = {"users.txt", "items.txt", "entities.txt", "relations.txt"};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<Index> with_cutoff_20(std::vector<Index> cutoffs) {
  if (std::find(cutoffs.begin(), cutoffs.end(), 20) == cutoffs.end()) cutoffs.push_back(20);
  return cutoffs;
}

InverseTripletPolicy policy_of(const RunConfig& config) {
  InverseTripletPolicy policy;
  policy.add_inverse = config.data.inverse_triplets;
  return policy;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_value(SweepParam param, double v) {
  if (param == SweepParam::kLayers) return std::to_string(static_cast<Index>(v));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

VariantResult summarize(std::string label, const TrainOutcome& outcome) {
  VariantResult r;
  r.label = std::move(label);
  r.auc = outcome.final_report.auc;
  r.recall20 = outcome.final_report.recall_at(20);
  r.ndcg20 = outcome.final_report.ndcg_at(20);
  r.best_epoch = outcome.fit.best_epoch;
  r.history = outcome.fit.history;
  return r;
}

}  // namespace

PrepareResult cmd_prepare(const RunConfig& config, const fs::path& out, bool force) {
  config.validate();
  if (config.data.interactions.empty()) throw ConfigError("prepare needs data.interactions");
  if (config.data.kg.empty()) throw ConfigError("prepare needs data.kg");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) {
      throw ConfigError("output directory " + out.string() + " is not empty; pass --force");
    }
    for (const char* name : kPreparedFiles) fs::remove(out / name);
    for (const char* name : kIdMaps) fs::remove(out / "id_maps" / name);
  }

  PrepareOptions options;
  options.format = config.data.format;
  options.threshold = config.data.threshold;
  options.core_k = config.data.core_k;
  options.split_ratio = config.data.split_ratio;
  options.seed = derive_seed(config.train.seed, SeedStream::kSplit);
  PrepareResult result = run_prepare_pipeline(config.data.interactions, config.data.kg, options);
  fs::create_directories(out);
  write_processed_dataset(out, result);
  return result;
}

TrainOutcome cmd_train(const RunConfig& config, const fs::path& out) {
  config.validate();
  if (config.data.dataset.empty()) throw ConfigError("train needs data.dataset");
  const ProcessedDataset data = load_processed_dataset(config.data.dataset);

  fs::create_directories(out);
  RunConfig echoed = config;
  echoed.output = out;
  write_text(out / "config.ini", serialize_config(echoed));

  KdarModel<float> model(data.table, data.kg, config.model, config.ablation, policy_of(config));
  model.initialize(derive_seed(config.train.seed, SeedStream::kInit));

  TrainConfig train = config.train;
  train.checkpoint_path = out / "checkpoint.bin";
  train.history_path = out / "history.tsv";

  TrainOutcome outcome;
  outcome.fit = fit(train, data.table, model);

  EvalOptions eval_options;
  eval_options.cutoffs = with_cutoff_20(config.train.cutoffs);
  eval_options.threads = config.train.eval_threads;
  const auto [users, items] = model.final_representations();
  outcome.final_report = evaluate(users, items, data.table, eval_options);
  write_text(out / "report.txt", format_report_kv(outcome.final_report));
  return outcome;
}

EvalOutcome cmd_eval(const RunConfig& config, const fs::path& checkpoint,
                     const std::vector<Index>& cutoffs, std::optional<GroupMode> groups) {
  config.validate();
  if (config.data.dataset.empty()) throw ConfigError("eval needs data.dataset");
  if (cutoffs.empty()) throw ConfigError("--k needs at least one cutoff");
  for (Index k : cutoffs) {
    if (k < 1) throw ConfigError("cutoffs must be >= 1");
  }
  const ProcessedDataset data = load_processed_dataset(config.data.dataset);
  KdarModel<float> model(data.table, data.kg, config.model, config.ablation, policy_of(config));
  load_checkpoint(checkpoint, model.parameters());

  EvalOptions options;
  options.cutoffs = cutoffs;
  options.threads = config.train.eval_threads;
  const auto [users, items] = model.final_representations();
  EvalOutcome outcome;
  outcome.report = evaluate(users, items, data.table, options);
  if (groups) outcome.groups = group_report(outcome.report, *groups);
  return outcome;
}

std::vector<VariantResult> cmd_ablate(const RunConfig& config, const fs::path& out) {
  config.validate();
  struct Variant {
    const char* label;
    const char* dir;
    AblationFlags flags;
  };
  const Variant variants[] = {
      {"KDAR", "full", {}},
      {"w/o Enhancement", "no_enhancement", {.no_enhancement = true}},
      {"w/o ATTN", "no_attention", {.no_attention = true}},
      {"w/o CL", "no_cl", {.no_cl = true}},
      {"w/o CG", "no_cg", {.no_cg = true}},
  };
  std::vector<VariantResult> rows;
  for (const auto& v : variants) {
    RunConfig run = config;
    run.ablation = v.flags;
    std::clog << "ablation: " << v.label << "\n";
    rows.push_back(summarize(v.label, cmd_train(run, out / v.dir)));
  }
  write_text(out / "ablation.tsv", format_variant_table(rows, "variant"));
  return rows;
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "L" || name == "layers") return SweepParam::kLayers;
  if (name == "tau" || name == "temperature") return SweepParam::kTemperature;
  throw ConfigError("unsupported sweep parameter '" + name + "' (expected L or tau)");
}

std::string to_string(SweepParam param) {
  return param == SweepParam::kLayers ? "L" : "tau";
}

std::vector<double> dedupe_sweep_values(const std::vector<double>& values) {
  std::vector<double> out;
  for (double v : values) {
    if (std::find(out.begin(), out.end(), v) != out.end()) {
      std::clog << "warning: duplicate sweep value " << v << " ignored\n";
      continue;
    }
    out.push_back(v);
  }
  return out;
}

std::vector<VariantResult> cmd_sweep(const RunConfig& config, SweepParam param,
                                     const std::vector<double>& values, const fs::path& out) {
  config.validate();
  const std::vector<double> unique = dedupe_sweep_values(values);
  if (unique.empty()) throw ConfigError("sweep needs at least one value");
  for (double v : unique) {
    if (param == SweepParam::kLayers && (v < 1 || v != std::floor(v))) {
      throw ConfigError("L values must be positive integers");
    }
    if (param == SweepParam::kTemperature && !(v > 0)) {
      throw ConfigError("tau values must be positive");
    }
  }

  const std::string name = to_string(param);
  std::vector<VariantResult> rows;
  for (double v : unique) {
    RunConfig run = config;
    if (param == SweepParam::kLayers) {
      run.model.layers = static_cast<Index>(v);
    } else {
      run.model.temperature = v;
    }
    const std::string label = format_value(param, v);
    std::clog << "sweep: " << name << "=" << label << "\n";
    rows.push_back(summarize(label, cmd_train(run, out / (name + "_" + label))));
  }

  write_text(out / ("sweep_" + name + ".tsv"), format_variant_table(rows, name));
  std::string curves = name + "\tepoch\trecall@20\tndcg@20\tauc\n";
  for (const auto& r : rows) {
    for (const auto& h : r.history) {
      curves += r.label + "\t" + std::to_string(h.epoch) + "\t" + format_real(h.recall20) + "\t" +
                format_real(h.ndcg20) + "\t" + format_real(h.auc) + "\n";
    }
  }
  write_text(out / ("sweep_" + name + "_curves.tsv"), curves);
  return rows;
}

std::string format_variant_table(const std::vector<VariantResult>& rows,
                                 const std::string& first_column) {
  std::string out = first_column + "\tauc\trecall@20\tndcg@20\n";
  for (const auto& r : rows) {
    out += r.label + "\t" + format_real(r.auc) + "\t" + format_real(r.recall20) + "\t" +
           format_real(r.ndcg20) + "\n";
  }
  return out;
}

}  // namespace kdar
