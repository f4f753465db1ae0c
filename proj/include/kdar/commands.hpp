#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kdar/config.hpp"
#include "kdar/eval.hpp"
#include "kdar/train.hpp"

namespace kdar {

// Runs the ingest pipeline on config.data.{interactions,kg} and writes the
// processed dataset into `out`. An existing `out` is refused unless `force`,
// in which case only the files this command writes are replaced.
PrepareResult cmd_prepare(const RunConfig& config, const std::filesystem::path& out, bool force);

struct TrainOutcome {
  FitResult fit;
  RankingReport final_report;
};

// Trains on config.data.dataset and writes checkpoint.bin, history.tsv,
// report.txt and config.ini into `out`.
TrainOutcome cmd_train(const RunConfig& config, const std::filesystem::path& out);

struct EvalOutcome {
  RankingReport report;
  std::optional<GroupReport> groups;
};

// Loads a checkpoint into a model shaped by `config` and evaluates it.
EvalOutcome cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                     const std::vector<Index>& cutoffs, std::optional<GroupMode> groups);

struct VariantResult {
  std::string label;
  double auc = 0;
  double recall20 = 0;
  double ndcg20 = 0;
  Index best_epoch = 0;
  std::vector<HistoryRow> history;
};

// Five runs sharing seed and data: full, w/o Enhancement, w/o ATTN, w/o CL,
// w/o CG. Writes ablation.tsv into `out`.
std::vector<VariantResult> cmd_ablate(const RunConfig& config, const std::filesystem::path& out);

enum class SweepParam { kLayers, kTemperature };

SweepParam parse_sweep_param(const std::string& name);  // "L" or "tau"
std::string to_string(SweepParam param);

// Order-preserving deduplication; warns on stderr when values repeat.
std::vector<double> dedupe_sweep_values(const std::vector<double>& values);

// One run per value. Writes sweep_<param>.tsv (final metrics) and
// sweep_<param>_curves.tsv (per-evaluation history) into `out`.
std::vector<VariantResult> cmd_sweep(const RunConfig& config, SweepParam param,
                                     const std::vector<double>& values,
                                     const std::filesystem::path& out);

std::string format_variant_table(const std::vector<VariantResult>& rows,
                                 const std::string& first_column);

}  // namespace kdar
