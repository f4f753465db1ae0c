#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "kdar/error.hpp"
#include "kdar/eval.hpp"
#include "oracles.hpp"

using namespace kdar;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<Index> train;
  std::vector<Index> test;
};

// Scores drawn from a small set so ties are common.
Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  const Index n = std::uniform_int_distribution<Index>(2, 100)(rng);
  const int levels = std::uniform_int_distribution<int>(2, 30)(rng);
  for (Index i = 0; i < n; ++i) {
    in.scores.push_back(std::uniform_int_distribution<int>(0, levels)(rng) / 7.0);
  }
  std::vector<Index> items(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) items[static_cast<std::size_t>(i)] = i;
  std::shuffle(items.begin(), items.end(), rng);
  const Index n_train = std::uniform_int_distribution<Index>(0, n / 2)(rng);
  const Index n_test = std::uniform_int_distribution<Index>(1, n - n_train)(rng);
  in.train.assign(items.begin(), items.begin() + n_train);
  in.test.assign(items.begin() + n_train, items.begin() + n_train + n_test);
  std::sort(in.train.begin(), in.train.end());
  std::sort(in.test.begin(), in.test.end());
  return in;
}

}  // namespace

TEST_CASE("metrics equal brute-force enumeration on random instances") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    const Instance in = random_instance(rng);
    const auto ranking = rank_all(in.scores, in.train);
    const auto brute = oracle::brute_ranking(in.scores, in.train);
    REQUIRE(ranking == brute);
    for (Index k : {1, 5, 10, 20, 50, 100}) {
      CHECK(recall_at_k(ranking, in.test, k) == oracle::brute_recall(brute, in.test, k));
      CHECK(ndcg_at_k(ranking, in.test, k) == oracle::brute_ndcg(brute, in.test, k));
    }
    const auto a = auc(in.scores, in.train, in.test);
    const auto b = oracle::brute_auc(in.scores, in.train, in.test);
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(std::abs(*a - *b) <= 1e-9);
  }
}

TEST_CASE("ties rank by ascending item id") {
  const std::vector<double> scores = {1, 3, 3, 0, 3};
  const std::vector<Index> exclude = {2};
  CHECK(rank_all(scores, exclude) == std::vector<Index>{1, 4, 0, 3});
}

TEST_CASE("hand-computed metric values") {
  const std::vector<Index> ranking = {4, 1, 7, 2};
  const std::vector<Index> test = {2, 7};
  CHECK(recall_at_k(ranking, test, 3) == 0.5);
  const double dcg = 1.0 / std::log2(4.0);
  const double idcg = 1.0 + 1.0 / std::log2(3.0);
  CHECK(ndcg_at_k(ranking, test, 3) == doctest::Approx(dcg / idcg));
  CHECK(ndcg_at_k(ranking, test, 1) == 0.0);

  const std::vector<double> perfect = {0.1, 0.9, 0.8, 0.2};
  CHECK(*auc(perfect, std::vector<Index>{}, std::vector<Index>{1, 2}) == 1.0);
  const std::vector<double> flat = {1, 1, 1, 1};
  CHECK(*auc(flat, std::vector<Index>{}, std::vector<Index>{0}) == 0.5);
  CHECK_FALSE(auc(flat, std::vector<Index>{}, std::vector<Index>{0, 1, 2, 3}).has_value());
  CHECK_THROWS_AS(recall_at_k(ranking, std::vector<Index>{}, 3), std::invalid_argument);
}

TEST_CASE("evaluation averages over users with test items and is thread-count invariant") {
  testing::RandomGraphSpec spec;
  spec.users = 37;
  spec.items = 60;
  spec.max_degree = 10;
  spec.test_per_user = 3;
  const auto data = testing::random_dataset(spec);
  std::mt19937_64 rng(3);
  Matrix<float> users(spec.users, 5), items(spec.items, 5);
  std::normal_distribution<float> g;
  for (Index k = 0; k < users.size(); ++k) users.data()[k] = g(rng);
  for (Index k = 0; k < items.size(); ++k) items.data()[k] = g(rng);

  EvalOptions one;
  one.cutoffs = {5, 20};
  one.threads = 1;
  EvalOptions many = one;
  many.threads = 7;
  const auto a = evaluate(users, items, data.table, one);
  const auto b = evaluate(users, items, data.table, many);
  CHECK(a.recall == b.recall);
  CHECK(a.ndcg == b.ndcg);
  CHECK(a.auc == b.auc);
  CHECK(a.num_users == spec.users);

  // Mean of per-user brute-force values.
  double recall = 0, ndcg = 0, auc_sum = 0;
  for (Index u = 0; u < spec.users; ++u) {
    std::vector<double> s(static_cast<std::size_t>(spec.items));
    for (Index i = 0; i < spec.items; ++i) {
      s[static_cast<std::size_t>(i)] = items.row(i).dot(users.row(u));
    }
    const auto& train = data.table.user_train_items[static_cast<std::size_t>(u)];
    const auto& test = data.table.user_test_items[static_cast<std::size_t>(u)];
    const auto r = oracle::brute_ranking(s, train);
    recall += oracle::brute_recall(r, test, 20);
    ndcg += oracle::brute_ndcg(r, test, 20);
    auc_sum += *oracle::brute_auc(s, train, test);
  }
  CHECK(a.recall_at(20) == doctest::Approx(recall / spec.users).epsilon(1e-12));
  CHECK(a.ndcg_at(20) == doctest::Approx(ndcg / spec.users).epsilon(1e-12));
  CHECK(a.auc == doctest::Approx(auc_sum / spec.users).epsilon(1e-12));
  CHECK_THROWS_AS(a.recall_at(10), std::out_of_range);
}

TEST_CASE("a cutoff list yields exactly one row per cutoff and metric") {
  testing::RandomGraphSpec spec;
  const auto data = testing::random_dataset(spec);
  EvalOptions opts;
  opts.cutoffs = {5, 100};
  const auto report = evaluate([](Index, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); },
                               data.table, opts);
  const std::string text = format_report_kv(report);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  CHECK(text.find("recall@5\t") != std::string::npos);
  CHECK(text.find("ndcg@100\t") != std::string::npos);
  CHECK(text.find("recall@20") == std::string::npos);
  CHECK(report.auc == 0.5);
}

TEST_CASE("group reports split at the tercile values and recombine") {
  RankingReport base;
  base.cutoffs = {20};
  std::vector<UserRecord> records;
  for (Index u = 0; u < 10; ++u) {
    UserRecord r;
    r.user = u;
    r.train_degree = u + 1;
    r.mean_item_popularity = 10.0 - static_cast<double>(u);
    r.recall = {static_cast<double>(u) / 10.0};
    r.ndcg = {static_cast<double>(u) / 20.0};
    r.auc = 0.5;
    records.push_back(r);
  }
  base = aggregate(records, {20});

  const auto g = group_report(base, GroupMode::kInteractionCount);
  // Sorted degrees 1..10: positions 3 and 6 hold 4 and 7.
  CHECK(g.boundaries[0] == 4.0);
  CHECK(g.boundaries[1] == 7.0);
  REQUIRE(g.groups.size() == 3);
  CHECK(g.groups[0].report.num_users == 3);
  CHECK(g.groups[1].report.num_users == 3);
  CHECK(g.groups[2].report.num_users == 4);
  double weighted = 0;
  for (const auto& grp : g.groups) {
    weighted += grp.report.recall_at(20) * static_cast<double>(grp.report.num_users);
  }
  CHECK(weighted / 10.0 == doctest::Approx(base.recall_at(20)));

  const auto pop = group_report(base, GroupMode::kItemPopularity, std::array<double, 2>{3.0, 8.0});
  CHECK(pop.groups[0].report.num_users == 2);  // popularity 1, 2
  CHECK(pop.groups[1].report.num_users == 5);
  CHECK(pop.groups[2].report.num_users == 3);

  CHECK(parse_group_mode("cold-start") == GroupMode::kInteractionCount);
  CHECK(parse_group_mode("long-tail") == GroupMode::kItemPopularity);
  CHECK_THROWS_AS(parse_group_mode("random"), ConfigError);
  CHECK(format_group_report(g).find("[group3]") != std::string::npos);
}

TEST_CASE("evaluation rejects bad inputs") {
  testing::RandomGraphSpec spec;
  const auto data = testing::random_dataset(spec);
  EvalOptions opts;
  opts.cutoffs = {};
  auto zero = [](Index, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); };
  CHECK_THROWS_AS(evaluate(zero, data.table, opts), ConfigError);
  opts.cutoffs = {0};
  CHECK_THROWS_AS(evaluate(zero, data.table, opts), ConfigError);
  Matrix<float> u(spec.users, 3), i(spec.items, 4);
  CHECK_THROWS_AS(evaluate(u, i, data.table, EvalOptions{}), std::invalid_argument);
}
