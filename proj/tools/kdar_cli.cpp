// kdar: prepare datasets, train, evaluate, and run ablations or sweeps.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdar/commands.hpp"
#include "kdar/error.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string interactions;
  std::string kg;
  std::string format;
  std::optional<double> threshold;
  std::optional<kdar::Index> epochs;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run configuration file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--dataset", o.dataset, "processed dataset directory");
  cmd->add_option("--epochs", o.epochs, "training epochs");
}

kdar::RunConfig resolve(const Overrides& o) {
  kdar::RunConfig config = o.config.empty() ? kdar::RunConfig{} : kdar::load_config(o.config);
  if (o.seed) config.train.seed = *o.seed;
  if (!o.dataset.empty()) config.data.dataset = o.dataset;
  if (!o.interactions.empty()) config.data.interactions = o.interactions;
  if (!o.kg.empty()) config.data.kg = o.kg;
  if (!o.format.empty()) config.data.format = kdar::parse_interaction_format(o.format);
  if (o.threshold) config.data.threshold = *o.threshold;
  if (o.epochs) config.train.epochs = *o.epochs;
  config.validate();
  return config;
}

std::filesystem::path output_dir(const std::string& flag, const kdar::RunConfig& config) {
  return flag.empty() ? config.output : std::filesystem::path(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-driven attribute-aware recommendation"};
  app.require_subcommand(1);

  Overrides o;
  std::string out;
  bool force = false;
  std::string groups;
  std::string cutoffs;
  std::string checkpoint;
  std::string param;
  std::string values;

  auto* prepare = app.add_subcommand("prepare", "filter, remap and split raw data");
  add_common(prepare, o);
  prepare->add_option("--interactions", o.interactions, "raw interaction file");
  prepare->add_option("--kg", o.kg, "raw knowledge-graph triplet file");
  prepare->add_option("--format", o.format, "pair-list or rating-threshold");
  prepare->add_option("--threshold", o.threshold, "minimum rating kept as positive");
  prepare->add_option("--out", out, "output dataset directory")->required();
  prepare->add_flag("--force", force, "replace an existing output");

  auto* train = app.add_subcommand("train", "train and write checkpoint, history and report");
  add_common(train, o);
  train->add_option("--out", out, "output run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--k", cutoffs, "comma-separated cutoffs");
  eval->add_option("--groups", groups, "cold-start or long-tail");
  eval->add_option("--out", out, "write the report here instead of stdout only");

  auto* ablate = app.add_subcommand("ablate", "train the full model and four ablations");
  add_common(ablate, o);
  ablate->add_option("--out", out, "output directory");

  auto* sweep = app.add_subcommand("sweep", "train once per hyperparameter value");
  add_common(sweep, o);
  sweep->add_option("--param", param, "L or tau")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const kdar::RunConfig config = resolve(o);
    if (prepare->parsed()) {
      const auto result = kdar::cmd_prepare(config, out, force);
      std::cout << kdar::format_stats(result.processed.stats);
    } else if (train->parsed()) {
      const auto outcome = kdar::cmd_train(config, output_dir(out, config));
      std::cout << kdar::format_report_kv(outcome.final_report);
    } else if (eval->parsed()) {
      const std::vector<kdar::Index> ks =
          cutoffs.empty() ? config.train.cutoffs : kdar::parse_index_list(cutoffs);
      std::optional<kdar::GroupMode> mode;
      if (!groups.empty()) mode = kdar::parse_group_mode(groups);
      const auto outcome = kdar::cmd_eval(config, checkpoint, ks, mode);
      std::string text = kdar::format_report_kv(outcome.report);
      if (outcome.groups) text += kdar::format_group_report(*outcome.groups);
      std::cout << text;
      if (!out.empty()) {
        std::ofstream file(out);
        if (!file) throw kdar::DataError("cannot write " + out);
        file << text;
      }
    } else if (ablate->parsed()) {
      const auto rows = kdar::cmd_ablate(config, output_dir(out, config));
      std::cout << kdar::format_variant_table(rows, "variant");
    } else if (sweep->parsed()) {
      const auto rows = kdar::cmd_sweep(config, kdar::parse_sweep_param(param),
                                        kdar::parse_real_list(values), output_dir(out, config));
      std::cout << kdar::format_variant_table(rows, kdar::to_string(kdar::parse_sweep_param(param)));
    }
  } catch (const kdar::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const kdar::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const kdar::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
