#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kdar/eval.hpp"
#include "kdar/model.hpp"

namespace kdar {

// Independent random streams derived from one master seed.
enum class SeedStream : std::uint64_t { kInit = 1, kSplit = 2, kSampling = 3 };

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

struct TrainConfig {
  Index epochs = 500;
  Index batch_size = 2048;
  Index eval_every = 5;
  std::uint64_t seed = 2024;
  Index patience = 10;  // evaluations without Recall@20 improvement before stopping
  std::filesystem::path checkpoint_path;  // best checkpoint; empty to skip
  std::filesystem::path history_path;     // metric history; empty to skip
  std::vector<Index> cutoffs = kDefaultCutoffs;
  unsigned eval_threads = 0;
  bool verbose = false;

  void validate() const;
};

// Uniform item not in `owned` (sorted), by rejection; -1 after `max_tries`
// failed draws or when the user owns every item.
Index sample_negative(std::span<const Index> owned, Index num_items, std::mt19937_64& rng,
                      int max_tries = 1000);

// One pass over the shuffled training pairs, one negative per pair. Pairs
// whose user owns every item are skipped and counted in `skipped`.
std::vector<TripletBatch> sample_epoch_batches(const InteractionTable& table, Index batch_size,
                                               std::mt19937_64& rng,
                                               std::size_t* skipped = nullptr);

// Forward, loss, backward and one Adam step per batch. Returns losses
// averaged over the epoch's triplets. Throws NumericalError on NaN/Inf.
LossBreakdown train_epoch(KdarModel<float>& model, Adam<float>& optimizer,
                          const std::vector<TripletBatch>& batches);

struct HistoryRow {
  Index epoch = 0;
  double recall20 = 0;
  double ndcg20 = 0;
  double auc = 0;
  LossBreakdown losses;
};

// "epoch recall@20 ndcg@20 auc l_bpr l_bpr_c l_gac l_pac", tab separated.
std::string format_history_row(const HistoryRow& row);

struct FitResult {
  std::vector<HistoryRow> history;
  RankingReport best_report;
  Index best_epoch = 0;
  Index epochs_run = 0;
};

// Trains with periodic evaluation and early stopping on Recall@20. The model
// holds the best parameters on return.
FitResult fit(const TrainConfig& config, const InteractionTable& table, KdarModel<float>& model);

}  // namespace kdar
