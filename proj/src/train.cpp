#include "kdar/train.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "kdar/error.hpp"

namespace kdar {

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (epochs < 0) bad.emplace_back("epochs must be >= 0");
  if (batch_size < 1) bad.emplace_back("batch_size must be >= 1");
  if (eval_every < 1) bad.emplace_back("eval_every must be >= 1");
  if (patience < 0) bad.emplace_back("patience must be >= 0");
  if (cutoffs.empty()) bad.emplace_back("cutoffs must not be empty");
  for (Index k : cutoffs) {
    if (k < 1) bad.emplace_back("cutoffs must be >= 1");
  }
  if (!bad.empty()) {
    std::string msg = "invalid training configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

Index sample_negative(std::span<const Index> owned, Index num_items, std::mt19937_64& rng,
                      int max_tries) {
  if (static_cast<Index>(owned.size()) >= num_items) return -1;
  std::uniform_int_distribution<Index> dist(0, num_items - 1);
  for (int t = 0; t < max_tries; ++t) {
    const Index j = dist(rng);
    if (!std::binary_search(owned.begin(), owned.end(), j)) return j;
  }
  return -1;
}

std::vector<TripletBatch> sample_epoch_batches(const InteractionTable& table, Index batch_size,
                                               std::mt19937_64& rng, std::size_t* skipped) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(table.train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t dropped = 0;
  std::vector<TripletBatch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    TripletBatch batch;
    for (std::size_t k = begin; k < end; ++k) {
      const auto [u, i] = table.train_pairs[order[k]];
      const Index j =
          sample_negative(table.user_train_items[static_cast<std::size_t>(u)], table.num_items, rng);
      if (j < 0) {
        ++dropped;
        continue;
      }
      batch.users.push_back(u);
      batch.pos_items.push_back(i);
      batch.neg_items.push_back(j);
    }
    if (batch.size() > 0) batches.push_back(std::move(batch));
  }
  if (dropped > 0) {
    std::clog << "warning: skipped " << dropped
              << " training pairs whose user has no unobserved item\n";
  }
  if (skipped != nullptr) *skipped = dropped;
  return batches;
}

LossBreakdown train_epoch(KdarModel<float>& model, Adam<float>& optimizer,
                          const std::vector<TripletBatch>& batches) {
  LossBreakdown sum;
  std::size_t rows = 0;
  const double lr = model.hyperparameters().learning_rate;
  for (const auto& batch : batches) {
    Tape<float> tape;
    const auto fwd = model.forward(tape);
    const auto vars = model.loss(tape, fwd, batch);
    const LossBreakdown b = read_breakdown(tape, vars);
    tape.backward(vars.total);
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      require_finite<float>(model.parameters()[ParamId{p}].grad, "backward");
    }
    optimizer.step(model.parameters(), lr);

    const auto n = static_cast<double>(batch.size());
    sum.l_bpr += n * b.l_bpr;
    sum.l_bpr_c += n * b.l_bpr_c;
    sum.l_gac += n * b.l_gac;
    sum.l_pac += n * b.l_pac;
    sum.l_reg += n * b.l_reg;
    sum.total += n * b.total;
    rows += batch.size();
  }
  if (rows > 0) {
    const auto n = static_cast<double>(rows);
    sum.l_bpr /= n;
    sum.l_bpr_c /= n;
    sum.l_gac /= n;
    sum.l_pac /= n;
    sum.l_reg /= n;
    sum.total /= n;
  }
  return sum;
}

std::string format_history_row(const HistoryRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f",
                static_cast<long long>(r.epoch), r.recall20, r.ndcg20, r.auc, r.losses.l_bpr,
                r.losses.l_bpr_c, r.losses.l_gac, r.losses.l_pac);
  return buf;
}

FitResult fit(const TrainConfig& config, const InteractionTable& table, KdarModel<float>& model) {
  config.validate();
  EvalOptions eval_options;
  eval_options.cutoffs = config.cutoffs;
  if (std::find(eval_options.cutoffs.begin(), eval_options.cutoffs.end(), 20) ==
      eval_options.cutoffs.end()) {
    eval_options.cutoffs.push_back(20);
  }
  eval_options.threads = config.eval_threads;

  std::ofstream history;
  if (!config.history_path.empty()) {
    history.open(config.history_path, std::ios::trunc);
    if (!history) throw DataError("cannot write history file " + config.history_path.string());
  }

  Adam<float> optimizer(model.parameters());
  std::mt19937_64 rng(derive_seed(config.seed, SeedStream::kSampling));

  FitResult result;
  double best_recall = -1;
  Index stale = 0;
  std::vector<Matrix<float>> best_values;

  auto snapshot = [&] {
    best_values.clear();
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      best_values.push_back(model.parameters()[ParamId{p}].value);
    }
  };

  // Returns true when training should stop.
  auto evaluate_now = [&](Index epoch, const LossBreakdown& losses) {
    const auto [users, items] = model.final_representations();
    RankingReport report = evaluate(users, items, table, eval_options);
    HistoryRow row{epoch, report.recall_at(20), report.ndcg_at(20), report.auc, losses};
    result.history.push_back(row);
    if (history) history << format_history_row(row) << "\n" << std::flush;
    if (config.verbose) std::clog << format_history_row(row) << "\n";
    if (report.recall_at(20) > best_recall) {
      best_recall = report.recall_at(20);
      result.best_epoch = epoch;
      result.best_report = std::move(report);
      snapshot();
      if (!config.checkpoint_path.empty()) {
        save_checkpoint(config.checkpoint_path, model.parameters(), &optimizer);
      }
      stale = 0;
      return false;
    }
    ++stale;
    return stale > config.patience;
  };

  if (config.epochs == 0) {
    evaluate_now(0, {});
  }
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = sample_epoch_batches(table, config.batch_size, rng);
    const LossBreakdown losses = train_epoch(model, optimizer, batches);
    result.epochs_run = epoch;
    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      if (evaluate_now(epoch, losses)) break;
    }
  }

  for (std::size_t p = 0; p < best_values.size(); ++p) {
    model.parameters()[ParamId{p}].value = best_values[p];
  }
  return result;
}

}  // namespace kdar
