#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kdar/ingest.hpp"
#include "kdar/model.hpp"

namespace kdar::testing {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "kdar") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct RandomGraphSpec {
  Index users = 6;
  Index items = 7;
  Index extra_entities = 4;
  Index relations = 2;
  Index triplets = 10;
  Index min_degree = 1;  // train items per user
  Index max_degree = 3;
  Index test_per_user = 1;
  std::uint64_t seed = 1;
};

// Dense-id dataset with every user holding min..max train items and up to
// `test_per_user` disjoint test items. Triplets are distinct and may leave
// some items without attributes.
inline ProcessedDataset random_dataset(const RandomGraphSpec& s) {
  std::mt19937_64 rng(s.seed);
  auto uniform = [&](Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng);
  };

  std::vector<IdPair> train, test;
  for (Index u = 0; u < s.users; ++u) {
    std::vector<Index> items(static_cast<std::size_t>(s.items));
    for (Index i = 0; i < s.items; ++i) items[static_cast<std::size_t>(i)] = i;
    std::shuffle(items.begin(), items.end(), rng);
    const Index deg = std::min(uniform(s.min_degree, s.max_degree), s.items - 1);
    for (Index k = 0; k < deg; ++k) train.emplace_back(u, items[static_cast<std::size_t>(k)]);
    for (Index k = deg; k < std::min(s.items, deg + s.test_per_user); ++k) {
      test.emplace_back(u, items[static_cast<std::size_t>(k)]);
    }
  }

  ProcessedDataset out;
  out.table = make_interaction_table(s.users, s.items, std::move(train), std::move(test));
  out.kg.num_items = s.items;
  out.kg.num_entities = s.items + s.extra_entities;
  out.kg.num_relations = s.relations;
  std::set<Triplet> seen;
  for (int guard = 0; static_cast<Index>(seen.size()) < s.triplets && guard < 10000; ++guard) {
    Triplet t{uniform(0, s.items - 1), uniform(0, s.relations - 1),
              uniform(0, out.kg.num_entities - 1)};
    if (t.head != t.tail) seen.insert(t);
  }
  out.kg.triplets.assign(seen.begin(), seen.end());
  out.stats = compute_stats(out.table, out.kg);
  return out;
}

struct ClusteredSpec {
  Index users = 120;
  Index items = 90;
  Index clusters = 3;
  Index min_degree = 6;
  Index max_degree = 14;
  double in_cluster = 0.9;  // probability an interaction stays in the user's cluster
  std::uint64_t seed = 7;
};

// Raw token files with learnable structure: users and items belong to
// clusters, users mostly pick items of their cluster, and every item links
// to a per-cluster "genre" entity plus one random "tag" entity.
inline void write_clustered_raw(const std::filesystem::path& interactions,
                                const std::filesystem::path& kg, const ClusteredSpec& s) {
  std::mt19937_64 rng(s.seed);
  std::ofstream inter(interactions);
  const Index per_cluster = s.items / s.clusters;
  for (Index u = 0; u < s.users; ++u) {
    const Index c = u % s.clusters;
    const Index deg = std::uniform_int_distribution<Index>(s.min_degree, s.max_degree)(rng);
    std::set<Index> picked;
    while (static_cast<Index>(picked.size()) < deg) {
      const bool stay = std::bernoulli_distribution(s.in_cluster)(rng);
      const Index i = stay ? c * per_cluster +
                                 std::uniform_int_distribution<Index>(0, per_cluster - 1)(rng)
                           : std::uniform_int_distribution<Index>(0, s.items - 1)(rng);
      picked.insert(i);
    }
    for (Index i : picked) inter << "user" << u << "\titem" << i << "\n";
  }
  std::ofstream graph(kg);
  for (Index i = 0; i < s.items; ++i) {
    graph << "item" << i << "\tgenre\tg" << std::min(i / per_cluster, s.clusters - 1) << "\n";
    graph << "item" << i << "\ttag\tt" << std::uniform_int_distribution<int>(0, 9)(rng) << "\n";
  }
}

}  // namespace kdar::testing
