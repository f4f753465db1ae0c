#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "kdar/ingest.hpp"

namespace kdar {

// Bipartite user-item graph over the training interactions, with the
// symmetric normalization 1 / sqrt(|N_u| |N_i|) on every edge.
struct CollabAdjacency {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::vector<Index>> user_neighbors;
  std::vector<std::vector<Index>> item_neighbors;

  // Flat edge list ordered by (user, item); coefficients aligned with it.
  std::vector<Index> edge_users;
  std::vector<Index> edge_items;
  std::vector<double> edge_coeff;

  // 0 when (u, i) is not an edge.
  double norm_coeff(Index user, Index item) const;
  Index num_edges() const { return static_cast<Index>(edge_users.size()); }
};

struct InverseTripletPolicy {
  bool add_inverse = true;
};

struct RelationTail {
  Index relation = 0;
  Index tail = 0;

  friend bool operator==(const RelationTail&, const RelationTail&) = default;
  friend auto operator<=>(const RelationTail&, const RelationTail&) = default;
};

struct KGAdjacency {
  Index num_entities = 0;
  Index num_items = 0;
  Index base_relations = 0;
  Index num_relations = 0;  // doubled when inverses are added
  std::vector<std::vector<RelationTail>> head_neighbors;

  // First-order attributes of an item; the same list as its head_neighbors.
  std::span<const RelationTail> item_attributes(Index item) const {
    return head_neighbors.at(static_cast<std::size_t>(item));
  }
  Index num_edges() const;
};

CollabAdjacency build_collab_adjacency(const InteractionTable& table);

KGAdjacency build_kg_adjacency(const KnowledgeGraphStore& kg, InverseTripletPolicy policy = {});

// degree -> number of nodes with that degree; zero-degree nodes are omitted.
std::map<Index, Index> neighbor_degree_histogram(const CollabAdjacency& adj);
std::map<Index, Index> neighbor_degree_histogram(const KGAdjacency& adj);

}  // namespace kdar
