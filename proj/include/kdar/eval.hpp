#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdar/ingest.hpp"
#include "kdar/tensor.hpp"

namespace kdar {

inline const std::vector<Index> kDefaultCutoffs = {5, 10, 20, 50, 100};

// Candidate items (all items not in `exclude`) ordered by descending score,
// ties by ascending item id. `exclude` must be sorted.
std::vector<Index> rank_all(std::span<const double> scores, std::span<const Index> exclude);

// |top-k ∩ test| / |test|. `test` must be sorted and nonempty.
double recall_at_k(std::span<const Index> ranking, std::span<const Index> test, Index k);

// Binary-relevance NDCG with 1/log2(p+1) discount and truncated ideal DCG.
double ndcg_at_k(std::span<const Index> ranking, std::span<const Index> test, Index k);

// Fraction of (positive, negative) candidate pairs ordered correctly, ties
// counted one half, via rank sums. Candidates are items outside `exclude`;
// positives are `test`, the rest negatives. nullopt without positives or
// negatives.
std::optional<double> auc(std::span<const double> scores, std::span<const Index> exclude,
                          std::span<const Index> test);

struct UserRecord {
  Index user = 0;
  Index train_degree = 0;
  double mean_item_popularity = 0;  // mean train occurrence of the user's train items
  std::vector<double> recall;       // aligned with RankingReport::cutoffs
  std::vector<double> ndcg;
  std::optional<double> auc;
};

struct RankingReport {
  std::vector<Index> cutoffs;
  std::vector<double> recall;
  std::vector<double> ndcg;
  double auc = 0;
  Index num_users = 0;
  std::vector<UserRecord> users;

  // Throws std::out_of_range for a cutoff that was not evaluated.
  double recall_at(Index k) const;
  double ndcg_at(Index k) const;
};

// Fills `scores` (one entry per item) for a user.
using ScoreFn = std::function<void(Index user, std::span<double> scores)>;

struct EvalOptions {
  std::vector<Index> cutoffs = kDefaultCutoffs;
  unsigned threads = 0;  // 0: hardware concurrency
};

// All-ranking evaluation over every user with at least one test item.
RankingReport evaluate(const ScoreFn& score, const InteractionTable& table,
                       const EvalOptions& options = {});

// Scores are inner products of the given representation rows.
RankingReport evaluate(const Matrix<float>& user_reps, const Matrix<float>& item_reps,
                       const InteractionTable& table, const EvalOptions& options = {});

// Arithmetic mean over the records.
RankingReport aggregate(std::vector<UserRecord> records, const std::vector<Index>& cutoffs);

enum class GroupMode {
  kInteractionCount,  // train degree (cold-start analysis)
  kItemPopularity,    // mean popularity of the user's items (long-tail analysis)
};

GroupMode parse_group_mode(const std::string& name);
std::string to_string(GroupMode mode);

struct UserGroup {
  std::string label;
  double lower = 0;  // inclusive, -inf for the first group
  double upper = 0;  // exclusive, +inf for the last group
  RankingReport report;
};

struct GroupReport {
  GroupMode mode = GroupMode::kInteractionCount;
  std::array<double, 2> boundaries{};
  std::vector<UserGroup> groups;
};

// Three groups split at the given boundaries, or by default at the values
// found at positions floor(n/3) and floor(2n/3) of the sorted user values.
GroupReport group_report(const RankingReport& report, GroupMode mode,
                         std::optional<std::array<double, 2>> boundaries = std::nullopt);

// "metric@K<TAB>value" lines.
std::string format_report_kv(const RankingReport& report);
std::string format_report_table(const RankingReport& report);
std::string format_group_report(const GroupReport& groups);

}  // namespace kdar
