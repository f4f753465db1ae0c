#include "kdar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "kdar/error.hpp"

namespace kdar {

namespace {

// Marks excluded items; `exclude` is sorted.
std::vector<char> exclusion_mask(std::size_t n, std::span<const Index> exclude) {
  std::vector<char> mask(n, 0);
  for (Index i : exclude) mask.at(static_cast<std::size_t>(i)) = 1;
  return mask;
}

struct RankOrder {
  std::span<const double> scores;
  bool operator()(Index a, Index b) const {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  }
};

std::vector<Index> top_k(std::span<const double> scores, std::span<const Index> exclude,
                         Index k) {
  const auto mask = exclusion_mask(scores.size(), exclude);
  std::vector<Index> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask[i]) candidates.push_back(static_cast<Index>(i));
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(kk),
                    candidates.end(), RankOrder{scores});
  candidates.resize(kk);
  return candidates;
}

}  // namespace

std::vector<Index> rank_all(std::span<const double> scores, std::span<const Index> exclude) {
  return top_k(scores, exclude, static_cast<Index>(scores.size()));
}

double recall_at_k(std::span<const Index> ranking, std::span<const Index> test, Index k) {
  if (test.empty()) throw std::invalid_argument("recall_at_k: empty test set");
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
  std::size_t hits = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (std::binary_search(test.begin(), test.end(), ranking[p])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

double ndcg_at_k(std::span<const Index> ranking, std::span<const Index> test, Index k) {
  if (test.empty()) throw std::invalid_argument("ndcg_at_k: empty test set");
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
  double dcg = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (std::binary_search(test.begin(), test.end(), ranking[p])) {
      dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    }
  }
  double idcg = 0;
  const auto ideal = std::min<std::size_t>(static_cast<std::size_t>(k), test.size());
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

std::optional<double> auc(std::span<const double> scores, std::span<const Index> exclude,
                          std::span<const Index> test) {
  auto mask = exclusion_mask(scores.size(), exclude);
  std::vector<std::pair<double, char>> cand;  // (score, is_positive)
  cand.reserve(scores.size());
  std::vector<char> positive(scores.size(), 0);
  for (Index i : test) positive.at(static_cast<std::size_t>(i)) = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask[i]) cand.emplace_back(scores[i], positive[i]);
  }
  std::sort(cand.begin(), cand.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double pos = 0;
  double rank_sum = 0;
  for (std::size_t lo = 0; lo < cand.size();) {
    std::size_t hi = lo;
    while (hi < cand.size() && cand[hi].first == cand[lo].first) ++hi;
    // 1-based ranks lo+1..hi share their average.
    const double avg_rank = (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
    for (std::size_t k = lo; k < hi; ++k) {
      if (cand[k].second) {
        pos += 1;
        rank_sum += avg_rank;
      }
    }
    lo = hi;
  }
  const double neg = static_cast<double>(cand.size()) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double RankingReport::recall_at(Index k) const {
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    if (cutoffs[c] == k) return recall[c];
  }
  throw std::out_of_range("recall@" + std::to_string(k) + " was not evaluated");
}

double RankingReport::ndcg_at(Index k) const {
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    if (cutoffs[c] == k) return ndcg[c];
  }
  throw std::out_of_range("ndcg@" + std::to_string(k) + " was not evaluated");
}

RankingReport aggregate(std::vector<UserRecord> records, const std::vector<Index>& cutoffs) {
  RankingReport r;
  r.cutoffs = cutoffs;
  r.recall.assign(cutoffs.size(), 0.0);
  r.ndcg.assign(cutoffs.size(), 0.0);
  r.num_users = static_cast<Index>(records.size());
  std::size_t auc_users = 0;
  for (const auto& rec : records) {
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      r.recall[c] += rec.recall[c];
      r.ndcg[c] += rec.ndcg[c];
    }
    if (rec.auc) {
      r.auc += *rec.auc;
      ++auc_users;
    }
  }
  if (!records.empty()) {
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      r.recall[c] /= static_cast<double>(records.size());
      r.ndcg[c] /= static_cast<double>(records.size());
    }
  }
  if (auc_users > 0) r.auc /= static_cast<double>(auc_users);
  r.users = std::move(records);
  return r;
}

RankingReport evaluate(const ScoreFn& score, const InteractionTable& table,
                       const EvalOptions& options) {
  if (options.cutoffs.empty()) throw ConfigError("at least one cutoff K is required");
  for (Index k : options.cutoffs) {
    if (k < 1) throw ConfigError("cutoffs must be >= 1");
  }
  const Index max_k = *std::max_element(options.cutoffs.begin(), options.cutoffs.end());

  std::vector<Index> users;
  for (Index u = 0; u < table.num_users; ++u) {
    if (!table.user_test_items[static_cast<std::size_t>(u)].empty()) users.push_back(u);
  }
  if (users.empty()) throw DataError("evaluation needs a nonempty test set");

  std::vector<double> popularity(static_cast<std::size_t>(table.num_items));
  for (Index i = 0; i < table.num_items; ++i) {
    popularity[static_cast<std::size_t>(i)] =
        static_cast<double>(table.item_train_users[static_cast<std::size_t>(i)].size());
  }

  std::vector<UserRecord> records(users.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(static_cast<std::size_t>(table.num_items));
    for (std::size_t k = begin; k < end; ++k) {
      const Index u = users[k];
      const auto& train = table.user_train_items[static_cast<std::size_t>(u)];
      const auto& test = table.user_test_items[static_cast<std::size_t>(u)];
      score(u, scores);
      const auto ranking = top_k(scores, train, max_k);
      UserRecord& rec = records[k];
      rec.user = u;
      rec.train_degree = static_cast<Index>(train.size());
      double pop = 0;
      for (Index i : train) pop += popularity[static_cast<std::size_t>(i)];
      rec.mean_item_popularity = train.empty() ? 0.0 : pop / static_cast<double>(train.size());
      for (Index cutoff : options.cutoffs) {
        rec.recall.push_back(recall_at_k(ranking, test, cutoff));
        rec.ndcg.push_back(ndcg_at_k(ranking, test, cutoff));
      }
      rec.auc = auc(scores, train, test);
    }
  };

  unsigned threads = options.threads != 0 ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(users.size())));
  if (threads == 1) {
    work(0, users.size());
  } else {
    // Contiguous shards; each writes only its own slots, so the merge order
    // is the user order regardless of scheduling.
    std::vector<std::thread> pool;
    const std::size_t chunk = (users.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(users.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return aggregate(std::move(records), options.cutoffs);
}

RankingReport evaluate(const Matrix<float>& user_reps, const Matrix<float>& item_reps,
                       const InteractionTable& table, const EvalOptions& options) {
  if (user_reps.cols() != item_reps.cols()) {
    throw std::invalid_argument("evaluate: user and item representation widths differ");
  }
  if (user_reps.rows() != table.num_users || item_reps.rows() != table.num_items) {
    throw std::invalid_argument("evaluate: representation rows do not match the dataset");
  }
  return evaluate(
      [&](Index u, std::span<double> scores) {
        Eigen::VectorXf s = item_reps * user_reps.row(u).transpose();
        for (Index i = 0; i < s.size(); ++i) scores[static_cast<std::size_t>(i)] = s(i);
      },
      table, options);
}

GroupMode parse_group_mode(const std::string& name) {
  if (name == "cold-start" || name == "interaction-count") return GroupMode::kInteractionCount;
  if (name == "long-tail" || name == "item-popularity") return GroupMode::kItemPopularity;
  throw ConfigError("unknown group mode '" + name + "' (expected cold-start or long-tail)");
}

std::string to_string(GroupMode mode) {
  return mode == GroupMode::kInteractionCount ? "interaction-count" : "item-popularity";
}

GroupReport group_report(const RankingReport& report, GroupMode mode,
                         std::optional<std::array<double, 2>> boundaries) {
  auto value_of = [mode](const UserRecord& r) {
    return mode == GroupMode::kInteractionCount ? static_cast<double>(r.train_degree)
                                                : r.mean_item_popularity;
  };
  GroupReport out;
  out.mode = mode;
  if (boundaries) {
    out.boundaries = *boundaries;
  } else {
    std::vector<double> values;
    for (const auto& r : report.users) values.push_back(value_of(r));
    std::sort(values.begin(), values.end());
    if (!values.empty()) {
      out.boundaries = {values[values.size() / 3], values[2 * values.size() / 3]};
    }
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::array<double, 4> edges = {-inf, out.boundaries[0], out.boundaries[1], inf};
  for (std::size_t g = 0; g < 3; ++g) {
    std::vector<UserRecord> members;
    for (const auto& r : report.users) {
      const double v = value_of(r);
      if (v >= edges[g] && v < edges[g + 1]) members.push_back(r);
    }
    UserGroup group;
    group.label = "group" + std::to_string(g + 1);
    group.lower = edges[g];
    group.upper = edges[g + 1];
    group.report = aggregate(std::move(members), report.cutoffs);
    out.groups.push_back(std::move(group));
  }
  return out;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report_kv(const RankingReport& r) {
  std::ostringstream out;
  out << "users\t" << r.num_users << "\n";
  out << "auc\t" << fixed(r.auc) << "\n";
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    out << "recall@" << r.cutoffs[c] << "\t" << fixed(r.recall[c]) << "\n";
  }
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    out << "ndcg@" << r.cutoffs[c] << "\t" << fixed(r.ndcg[c]) << "\n";
  }
  return out.str();
}

std::string format_report_table(const RankingReport& r) {
  std::ostringstream out;
  out << "users: " << r.num_users << "   AUC: " << fixed(r.auc) << "\n";
  out << "     K     Recall       NDCG\n";
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    char line[64];
    std::snprintf(line, sizeof line, "%6lld   %.6f   %.6f\n", static_cast<long long>(r.cutoffs[c]),
                  r.recall[c], r.ndcg[c]);
    out << line;
  }
  return out.str();
}

std::string format_group_report(const GroupReport& g) {
  std::ostringstream out;
  out << "mode\t" << to_string(g.mode) << "\n";
  out << "boundaries\t" << fixed(g.boundaries[0]) << "\t" << fixed(g.boundaries[1]) << "\n";
  for (const auto& group : g.groups) {
    out << "[" << group.label << "]\n";
    out << "range\t" << fixed(group.lower) << "\t" << fixed(group.upper) << "\n";
    out << format_report_kv(group.report);
  }
  return out.str();
}

}  // namespace kdar
