#include "kdar/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "kdar/error.hpp"

namespace kdar {

namespace fs = std::filesystem;

InteractionFormat parse_interaction_format(const std::string& name) {
  if (name == "pair-list") return InteractionFormat::kPairList;
  if (name == "rating-threshold") return InteractionFormat::kRatingThreshold;
  throw ConfigError("unknown interaction format '" + name +
                    "' (expected pair-list or rating-threshold)");
}

std::string to_string(InteractionFormat format) {
  return format == InteractionFormat::kPairList ? "pair-list" : "rating-threshold";
}

Index Vocabulary::intern(const std::string& token) {
  auto [it, inserted] = ids_.try_emplace(token, size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

Index Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? -1 : it->second;
}

namespace {

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

struct PairHash {
  std::size_t operator()(const TokenPair& p) const {
    return std::hash<std::string>{}(p.first) * 1000003u ^ std::hash<std::string>{}(p.second);
  }
};

Index parse_id(const std::string& tok, const fs::path& file, std::size_t line) {
  Index v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
    throw ParseError(file.string(), line, "expected a nonnegative integer id, got '" + tok + "'");
  }
  return v;
}

}  // namespace

RawDataset load_interactions(const fs::path& path, InteractionFormat format, double threshold) {
  std::ifstream in = open_input(path);
  RawDataset raw;
  std::unordered_set<TokenPair, PairHash> seen;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t expected = format == InteractionFormat::kPairList ? 2 : 3;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_tokens(line);
    if (toks.empty()) continue;
    if (toks.size() != expected) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(expected) + " fields, got " +
                           std::to_string(toks.size()));
    }
    if (format == InteractionFormat::kRatingThreshold) {
      double rating = 0;
      try {
        std::size_t used = 0;
        rating = std::stod(toks[2], &used);
        if (used != toks[2].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(path.string(), line_no, "rating '" + toks[2] + "' is not a number");
      }
      if (!(rating >= threshold)) continue;
    }
    TokenPair pair{std::move(toks[0]), std::move(toks[1])};
    if (seen.insert(pair).second) {
      raw.interactions.push_back(std::move(pair));
    } else {
      ++raw.duplicate_interactions;
    }
  }
  if (raw.interactions.empty()) throw DataError("empty dataset: " + path.string());
  return raw;
}

std::vector<TokenTriplet> load_kg(const fs::path& path, std::size_t* duplicates) {
  std::ifstream in = open_input(path);
  std::vector<TokenTriplet> out;
  std::set<TokenTriplet> seen;
  std::size_t dups = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_tokens(line);
    if (toks.empty()) continue;
    if (toks.size() != 3) {
      throw ParseError(path.string(), line_no,
                       "expected 'head relation tail', got " + std::to_string(toks.size()) +
                           " fields");
    }
    TokenTriplet t{std::move(toks[0]), std::move(toks[1]), std::move(toks[2])};
    if (seen.insert(t).second) {
      out.push_back(std::move(t));
    } else {
      ++dups;
    }
  }
  if (duplicates != nullptr) *duplicates = dups;
  return out;
}

RawDataset apply_core_filter(const RawDataset& raw, Index k) {
  if (k < 1) throw ConfigError("core filter k must be >= 1");
  std::unordered_map<std::string, Index> degree;
  for (const auto& [u, i] : raw.interactions) ++degree[u];
  RawDataset out;
  out.triplets = raw.triplets;
  out.duplicate_interactions = raw.duplicate_interactions;
  out.duplicate_triplets = raw.duplicate_triplets;
  for (const auto& pair : raw.interactions) {
    if (degree[pair.first] >= k) out.interactions.push_back(pair);
  }
  if (out.interactions.empty()) {
    throw DataError("no interactions left after " + std::to_string(k) + "-core filtering");
  }
  return out;
}

IndexedDataset remap_ids(const RawDataset& raw) {
  IndexedDataset out;
  for (const auto& [u, i] : raw.interactions) {
    out.users.intern(u);
    out.items.intern(i);
  }
  // Items take the leading entity ids so item id == entity id.
  for (const auto& item : out.items.tokens()) out.entities.intern(item);

  std::unordered_set<std::string> kg_entities;
  for (const auto& [h, r, t] : raw.triplets) {
    kg_entities.insert(h);
    kg_entities.insert(t);
  }
  for (const auto& item : out.items.tokens()) {
    if (!kg_entities.contains(item)) out.items_missing_from_kg.push_back(item);
  }
  if (!out.items_missing_from_kg.empty()) {
    std::clog << "warning: " << out.items_missing_from_kg.size()
              << " interaction items have no KG entity; kept without attributes\n";
  }

  out.pairs.reserve(raw.interactions.size());
  for (const auto& [u, i] : raw.interactions) {
    out.pairs.emplace_back(out.users.find(u), out.items.find(i));
  }

  out.kg.triplets.reserve(raw.triplets.size());
  for (const auto& [h, r, t] : raw.triplets) {
    const Index hid = out.entities.intern(h);
    const Index rid = out.relations.intern(r);
    const Index tid = out.entities.intern(t);
    out.kg.triplets.push_back({hid, rid, tid});
  }
  out.kg.num_entities = out.entities.size();
  out.kg.num_relations = out.relations.size();
  out.kg.num_items = out.items.size();
  return out;
}

InteractionTable make_interaction_table(Index num_users, Index num_items,
                                        std::vector<IdPair> train, std::vector<IdPair> test) {
  InteractionTable t;
  t.num_users = num_users;
  t.num_items = num_items;
  t.user_train_items.resize(static_cast<std::size_t>(num_users));
  t.item_train_users.resize(static_cast<std::size_t>(num_items));
  t.user_test_items.resize(static_cast<std::size_t>(num_users));
  auto check = [&](const IdPair& p) {
    if (p.first < 0 || p.first >= num_users || p.second < 0 || p.second >= num_items) {
      throw DataError("interaction (" + std::to_string(p.first) + ", " +
                      std::to_string(p.second) + ") out of id range");
    }
  };
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  for (const auto& p : train) {
    check(p);
    t.user_train_items[static_cast<std::size_t>(p.first)].push_back(p.second);
    t.item_train_users[static_cast<std::size_t>(p.second)].push_back(p.first);
  }
  for (const auto& p : test) {
    check(p);
    auto& owned = t.user_train_items[static_cast<std::size_t>(p.first)];
    if (std::binary_search(owned.begin(), owned.end(), p.second)) {
      throw DataError("interaction (" + std::to_string(p.first) + ", " +
                      std::to_string(p.second) + ") appears in both train and test");
    }
    t.user_test_items[static_cast<std::size_t>(p.first)].push_back(p.second);
  }
  for (auto& users : t.item_train_users) std::sort(users.begin(), users.end());
  t.train_pairs = std::move(train);
  t.test_pairs = std::move(test);
  return t;
}

InteractionTable split_train_test(const IndexedDataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0 && ratio < 1)) throw ConfigError("split ratio must be in (0, 1)");
  const Index num_users = data.users.size();
  std::vector<std::vector<Index>> per_user(static_cast<std::size_t>(num_users));
  for (const auto& [u, i] : data.pairs) per_user[static_cast<std::size_t>(u)].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<IdPair> train, test;
  for (Index u = 0; u < num_users; ++u) {
    auto& items = per_user[static_cast<std::size_t>(u)];
    std::sort(items.begin(), items.end());
    std::shuffle(items.begin(), items.end(), rng);
    const auto deg = static_cast<double>(items.size());
    const auto n_train = static_cast<std::size_t>(std::ceil(ratio * deg - 1e-9));
    for (std::size_t k = 0; k < items.size(); ++k) {
      (k < n_train ? train : test).emplace_back(u, items[k]);
    }
  }
  return make_interaction_table(num_users, data.items.size(), std::move(train), std::move(test));
}

DatasetStats compute_stats(const InteractionTable& table, const KnowledgeGraphStore& kg) {
  DatasetStats s;
  s.users = table.num_users;
  s.items = table.num_items;
  s.train_interactions = static_cast<Index>(table.train_pairs.size());
  s.test_interactions = static_cast<Index>(table.test_pairs.size());
  s.interactions = s.train_interactions + s.test_interactions;
  s.entities = std::max(kg.num_entities, table.num_items);
  s.relations = kg.num_relations;
  s.triplets = static_cast<Index>(kg.triplets.size());
  return s;
}

PrepareResult run_prepare_pipeline(const fs::path& interactions, const fs::path& kg,
                                   const PrepareOptions& options) {
  PrepareResult result;
  RawDataset raw = load_interactions(interactions, options.format, options.threshold);
  raw.triplets = load_kg(kg, &raw.duplicate_triplets);
  {
    std::unordered_set<std::string> users;
    for (const auto& p : raw.interactions) users.insert(p.first);
    result.raw_users = users.size();
    result.raw_interactions = raw.interactions.size();
  }
  result.raw = apply_core_filter(raw, options.core_k);
  result.indexed = remap_ids(result.raw);
  result.processed.table = split_train_test(result.indexed, options.split_ratio, options.seed);
  result.processed.kg = result.indexed.kg;
  result.processed.stats = compute_stats(result.processed.table, result.processed.kg);
  return result;
}

std::string format_stats(const DatasetStats& s) {
  std::ostringstream out;
  out << "users=" << s.users << "\n"
      << "items=" << s.items << "\n"
      << "interactions=" << s.interactions << "\n"
      << "entities=" << s.entities << "\n"
      << "relations=" << s.relations << "\n"
      << "triplets=" << s.triplets << "\n"
      << "train_interactions=" << s.train_interactions << "\n"
      << "test_interactions=" << s.test_interactions << "\n";
  return out.str();
}

namespace {

void write_pairs(const fs::path& path, const std::vector<IdPair>& pairs) {
  std::ofstream out(path);
  for (const auto& [u, i] : pairs) out << u << ' ' << i << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

void write_vocab(const fs::path& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  for (Index id = 0; id < vocab.size(); ++id) out << vocab.token(id) << '\t' << id << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<IdPair> read_pairs(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<IdPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_tokens(line);
    if (toks.empty()) continue;
    if (toks.size() != 2) throw ParseError(path.string(), line_no, "expected 'user_id item_id'");
    out.emplace_back(parse_id(toks[0], path, line_no), parse_id(toks[1], path, line_no));
  }
  return out;
}

}  // namespace

void write_processed_dataset(const fs::path& dir, const PrepareResult& result) {
  fs::create_directories(dir / "id_maps");
  const auto& p = result.processed;
  write_pairs(dir / "train.txt", p.table.train_pairs);
  write_pairs(dir / "test.txt", p.table.test_pairs);
  {
    std::ofstream out(dir / "kg.txt");
    for (const auto& t : p.kg.triplets) out << t.head << ' ' << t.relation << ' ' << t.tail << '\n';
    if (!out) throw DataError("failed writing kg.txt");
  }
  {
    std::ofstream out(dir / "stats.txt");
    out << format_stats(p.stats);
    out << "items_missing_from_kg=" << result.indexed.items_missing_from_kg.size() << "\n";
    out << "duplicate_interactions=" << result.raw.duplicate_interactions << "\n";
    out << "duplicate_triplets=" << result.raw.duplicate_triplets << "\n";
  }
  write_vocab(dir / "id_maps" / "users.txt", result.indexed.users);
  write_vocab(dir / "id_maps" / "items.txt", result.indexed.items);
  write_vocab(dir / "id_maps" / "entities.txt", result.indexed.entities);
  write_vocab(dir / "id_maps" / "relations.txt", result.indexed.relations);
}

ProcessedDataset load_processed_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a processed dataset directory: " + dir.string());
  std::map<std::string, Index> kv;
  {
    const fs::path path = dir / "stats.txt";
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(path.string(), line_no, "expected key=value");
      kv[line.substr(0, eq)] = parse_id(line.substr(eq + 1), path, line_no);
    }
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("stats.txt lacks '" + key + "'");
    return it->second;
  };

  ProcessedDataset d;
  d.table = make_interaction_table(need("users"), need("items"), read_pairs(dir / "train.txt"),
                                   read_pairs(dir / "test.txt"));
  d.kg.num_entities = need("entities");
  d.kg.num_relations = need("relations");
  d.kg.num_items = d.table.num_items;
  {
    const fs::path path = dir / "kg.txt";
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto toks = split_tokens(line);
      if (toks.empty()) continue;
      if (toks.size() != 3) throw ParseError(path.string(), line_no, "expected 'head relation tail'");
      Triplet t{parse_id(toks[0], path, line_no), parse_id(toks[1], path, line_no),
                parse_id(toks[2], path, line_no)};
      if (t.head >= d.kg.num_entities || t.tail >= d.kg.num_entities ||
          t.relation >= d.kg.num_relations) {
        throw ParseError(path.string(), line_no, "id out of range");
      }
      d.kg.triplets.push_back(t);
    }
  }
  d.stats = compute_stats(d.table, d.kg);
  if (d.stats.interactions != need("interactions") || d.stats.triplets != need("triplets")) {
    throw DataError("stats.txt disagrees with the data files in " + dir.string());
  }
  return d;
}

}  // namespace kdar
