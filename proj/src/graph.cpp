#include "kdar/graph.hpp"

#include <algorithm>
#include <cmath>

#include "kdar/error.hpp"

namespace kdar {

double CollabAdjacency::norm_coeff(Index user, Index item) const {
  const auto& items = user_neighbors.at(static_cast<std::size_t>(user));
  if (!std::binary_search(items.begin(), items.end(), item)) return 0.0;
  const auto du = static_cast<double>(items.size());
  const auto di = static_cast<double>(item_neighbors.at(static_cast<std::size_t>(item)).size());
  return 1.0 / std::sqrt(du * di);
}

Index KGAdjacency::num_edges() const {
  Index n = 0;
  for (const auto& l : head_neighbors) n += static_cast<Index>(l.size());
  return n;
}

CollabAdjacency build_collab_adjacency(const InteractionTable& table) {
  CollabAdjacency adj;
  adj.num_users = table.num_users;
  adj.num_items = table.num_items;
  adj.user_neighbors = table.user_train_items;
  adj.item_neighbors = table.item_train_users;
  for (Index u = 0; u < adj.num_users; ++u) {
    const auto& items = adj.user_neighbors[static_cast<std::size_t>(u)];
    const auto du = static_cast<double>(items.size());
    for (Index i : items) {
      const auto di = static_cast<double>(adj.item_neighbors[static_cast<std::size_t>(i)].size());
      adj.edge_users.push_back(u);
      adj.edge_items.push_back(i);
      adj.edge_coeff.push_back(1.0 / std::sqrt(du * di));
    }
  }
  return adj;
}

KGAdjacency build_kg_adjacency(const KnowledgeGraphStore& kg, InverseTripletPolicy policy) {
  KGAdjacency adj;
  adj.num_entities = kg.num_entities;
  adj.num_items = kg.num_items;
  adj.base_relations = kg.num_relations;
  adj.num_relations = policy.add_inverse ? 2 * kg.num_relations : kg.num_relations;
  adj.head_neighbors.resize(static_cast<std::size_t>(kg.num_entities));
  for (const auto& t : kg.triplets) {
    if (t.head < 0 || t.head >= kg.num_entities || t.tail < 0 || t.tail >= kg.num_entities ||
        t.relation < 0 || t.relation >= kg.num_relations) {
      throw DataError("triplet id out of range");
    }
    adj.head_neighbors[static_cast<std::size_t>(t.head)].push_back({t.relation, t.tail});
    if (policy.add_inverse) {
      adj.head_neighbors[static_cast<std::size_t>(t.tail)].push_back(
          {t.relation + kg.num_relations, t.head});
    }
  }
  for (auto& l : adj.head_neighbors) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return adj;
}

std::map<Index, Index> neighbor_degree_histogram(const CollabAdjacency& adj) {
  std::map<Index, Index> h;
  for (const auto& l : adj.user_neighbors) {
    if (!l.empty()) ++h[static_cast<Index>(l.size())];
  }
  for (const auto& l : adj.item_neighbors) {
    if (!l.empty()) ++h[static_cast<Index>(l.size())];
  }
  return h;
}

std::map<Index, Index> neighbor_degree_histogram(const KGAdjacency& adj) {
  std::map<Index, Index> h;
  for (const auto& l : adj.head_neighbors) {
    if (!l.empty()) ++h[static_cast<Index>(l.size())];
  }
  return h;
}

}  // namespace kdar
