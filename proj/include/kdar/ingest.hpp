#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kdar/tensor.hpp"

namespace kdar {

enum class InteractionFormat {
  kPairList,         // "user item"
  kRatingThreshold,  // "user item rating", kept when rating >= threshold
};

InteractionFormat parse_interaction_format(const std::string& name);
std::string to_string(InteractionFormat format);

using TokenPair = std::pair<std::string, std::string>;
using TokenTriplet = std::array<std::string, 3>;

// Token-level data straight from the input files, deduplicated.
struct RawDataset {
  std::vector<TokenPair> interactions;
  std::vector<TokenTriplet> triplets;
  std::size_t duplicate_interactions = 0;
  std::size_t duplicate_triplets = 0;
};

// Bidirectional token <-> dense id table; ids are assigned in first-seen order.
class Vocabulary {
 public:
  Index intern(const std::string& token);
  // -1 when absent.
  Index find(const std::string& token) const;
  const std::string& token(Index id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> ids_;
};

struct Triplet {
  Index head = 0;
  Index relation = 0;
  Index tail = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// Entity ids [0, num_items) are the items themselves.
struct KnowledgeGraphStore {
  Index num_entities = 0;
  Index num_relations = 0;
  Index num_items = 0;
  std::vector<Triplet> triplets;
};

using IdPair = std::pair<Index, Index>;

// Dense-id interactions with a train/test split. All per-node lists are sorted.
struct InteractionTable {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<IdPair> train_pairs;
  std::vector<IdPair> test_pairs;
  std::vector<std::vector<Index>> user_train_items;
  std::vector<std::vector<Index>> item_train_users;
  std::vector<std::vector<Index>> user_test_items;
};

// Builds the per-node lists from the pair lists. Throws DataError on ids out
// of range or pairs present in both splits.
InteractionTable make_interaction_table(Index num_users, Index num_items,
                                        std::vector<IdPair> train, std::vector<IdPair> test);

// Interactions and KG remapped onto dense ids, before splitting.
struct IndexedDataset {
  Vocabulary users;
  Vocabulary items;
  Vocabulary entities;
  Vocabulary relations;
  std::vector<IdPair> pairs;
  KnowledgeGraphStore kg;
  // Interaction items with no KG entity; kept as attribute-less entities.
  std::vector<std::string> items_missing_from_kg;
};

struct DatasetStats {
  Index users = 0;
  Index items = 0;
  Index interactions = 0;
  Index entities = 0;
  Index relations = 0;
  Index triplets = 0;
  Index train_interactions = 0;
  Index test_interactions = 0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

RawDataset load_interactions(const std::filesystem::path& path, InteractionFormat format,
                             double threshold = 4.0);

// Returns the deduplicated triplets; `duplicates` receives the dropped count.
std::vector<TokenTriplet> load_kg(const std::filesystem::path& path,
                                  std::size_t* duplicates = nullptr);

// Drops users with fewer than k interactions (single pass, user side only).
RawDataset apply_core_filter(const RawDataset& raw, Index k = 5);

IndexedDataset remap_ids(const RawDataset& raw);

// Per-user random split: ceil(ratio * deg(u)) interactions go to train.
InteractionTable split_train_test(const IndexedDataset& data, double ratio, std::uint64_t seed);

DatasetStats compute_stats(const InteractionTable& table, const KnowledgeGraphStore& kg);

// A prepared dataset as stored on disk.
struct ProcessedDataset {
  InteractionTable table;
  KnowledgeGraphStore kg;
  DatasetStats stats;
};

struct PrepareOptions {
  InteractionFormat format = InteractionFormat::kPairList;
  double threshold = 4.0;
  Index core_k = 5;
  double split_ratio = 0.8;
  std::uint64_t seed = 2024;
};

struct PrepareResult {
  IndexedDataset indexed;
  ProcessedDataset processed;
  RawDataset raw;  // after core filtering
  std::size_t raw_users = 0;
  std::size_t raw_interactions = 0;
};

PrepareResult run_prepare_pipeline(const std::filesystem::path& interactions,
                                   const std::filesystem::path& kg, const PrepareOptions& options);

// Writes train.txt, test.txt, kg.txt, stats.txt and id_maps/ into `dir`.
void write_processed_dataset(const std::filesystem::path& dir, const PrepareResult& result);

ProcessedDataset load_processed_dataset(const std::filesystem::path& dir);

std::string format_stats(const DatasetStats& stats);

}  // namespace kdar
