#pragma once

#include <span>
#include <utility>
#include <vector>

#include "kdar/graph.hpp"
#include "kdar/ingest.hpp"
#include "kdar/tape.hpp"

namespace kdar {

struct Hyperparameters {
  Index dim = 64;
  Index layers = 3;
  double temperature = 1.0;
  double lambda_bpr_cf = 1.0;  // weight of the CF-only BPR term
  double lambda_cl = 0.1;      // weight of the two alignment-contrast terms
  double lambda_reg = 1e-5;    // L2 weight
  double learning_rate = 1e-4;

  // Throws ConfigError naming every invalid field.
  void validate() const;
};

struct AblationFlags {
  bool no_enhancement = false;  // e^E = e^C
  bool no_attention = false;    // uniform attribute weights
  bool no_cl = false;           // drop both alignment-contrast terms
  bool no_cg = false;           // predict from KG representations only

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

// Rows (u, i, j): i observed for u in training, j not.
struct TripletBatch {
  std::vector<Index> users;
  std::vector<Index> pos_items;
  std::vector<Index> neg_items;

  std::size_t size() const { return users.size(); }
};

// Index arrays for every aggregation, flattened from the adjacency lists.
struct PropagationPlan {
  Index num_users = 0;
  Index num_items = 0;
  Index num_entities = 0;
  Index num_relations = 0;

  // Collaborative graph edges with 1/sqrt(|N_u||N_i|).
  std::vector<Index> cg_users, cg_items;
  std::vector<double> cg_coeff;

  // KG edges with 1/|N_h|.
  std::vector<Index> kg_heads, kg_relations, kg_tails;
  std::vector<double> kg_weight;

  // Item attributes (KG edges headed by an item), grouped by item.
  std::vector<Index> attr_items, attr_relations, attr_tails;
  std::vector<Index> attr_count;  // per item

  // Training histories with 1/|N_u|.
  std::vector<Index> hist_users, hist_items;
  std::vector<double> hist_weight;
  std::vector<Index> user_attr_items;  // per user: history items that carry attributes
};

PropagationPlan make_propagation_plan(const CollabAdjacency& cg, const KGAdjacency& kg);

template <typename Real>
struct CfRepresentations {
  Var users;  // e_u^C, layer sum including layer 0
  Var items;  // e_i^C
};

template <typename Real>
struct KgRepresentations {
  std::vector<Var> layers;  // entity layers 0..L
  Var entities;             // e_h^K, layer sum including layer 0
};

// LightGCN propagation on the collaborative graph.
template <typename Real>
CfRepresentations<Real> propagate_cg(Tape<Real>& tape, Var user_emb, Var item_emb,
                                     const PropagationPlan& plan, Index layers);

// Relation-aware mean aggregation e_h^(l) = mean over N_h of e_r * e_t^(l-1).
template <typename Real>
KgRepresentations<Real> propagate_kg(Tape<Real>& tape, Var entity_emb, Var relation_emb,
                                     const PropagationPlan& plan, Index layers);

// e_u^K = sum_{l=1..L} mean over the user's items of e_i^(l-1).
template <typename Real>
Var propagate_user_kg(Tape<Real>& tape, const KgRepresentations<Real>& kg,
                      const PropagationPlan& plan);

// e_r * e_t^(0) for every item attribute, in plan order.
template <typename Real>
Var attribute_messages(Tape<Real>& tape, Var entity_emb, Var relation_emb,
                       const PropagationPlan& plan);

// Attention over each item's attributes:
//   w(i,r,t) = (e_i W_K) . ((e_r * e_t) W_Q) / sqrt(d), softmax within the item.
// With `uniform`, every attribute of item i gets 1 / |N_i^K|.
template <typename Real>
Var attention_weights(Tape<Real>& tape, Var entity_emb, Var messages, Var w_k, Var w_q,
                      const PropagationPlan& plan, bool uniform);

// sum over N_i^K of alpha * e_r * e_t^(0), one row per item.
template <typename Real>
Var weighted_attributes(Tape<Real>& tape, Var messages, Var alpha, const PropagationPlan& plan);

// e_u^P: unnormalized sum of the weighted attributes of the user's items.
template <typename Real>
Var user_preference(Tape<Real>& tape, Var item_weighted_attributes, const PropagationPlan& plan);

// e_i^A = e_i^(0) + weighted attributes.
template <typename Real>
Var attribute_fusion(Tape<Real>& tape, Var entity_emb, Var item_weighted_attributes,
                     const PropagationPlan& plan);

// Mean over `ids` of -ln[exp(s(a,p)/tau) / (exp(s(a,p)/tau) + exp(s(a,n)/tau))]
// with s the cosine similarity. Returns a constant 0 for an empty id list.
template <typename Real>
Var alignment_contrast(Tape<Real>& tape, Var anchor, Var positive, Var negative,
                       std::span<const Index> ids, Real temperature);

// Item-side alignment (attribute fusion vs CF, KG as negative).
template <typename Real>
Var loss_gac(Tape<Real>& tape, Var item_fusion, Var item_cf, Var item_kg,
             std::span<const Index> items, Real temperature);

// User-side alignment (preference vs CF, KG as negative).
template <typename Real>
Var loss_pac(Tape<Real>& tape, Var user_pref, Var user_cf, Var user_kg,
             std::span<const Index> users, Real temperature);

// (e^C + e^{P|A}) / 2, or e^C alone when enhancement is disabled.
template <typename Real>
std::pair<Var, Var> enhance(Tape<Real>& tape, Var user_cf, Var user_pref, Var item_cf,
                            Var item_fusion, const AblationFlags& flags);

// e* = e^E || e^K, or e^K alone without the collaborative side.
template <typename Real>
Var final_representation(Tape<Real>& tape, Var enhanced, Var kg, const AblationFlags& flags);

// Inner-product score. Throws std::invalid_argument on width mismatch.
template <typename Real>
Real predict(std::span<const Real> user_final, std::span<const Real> item_final);

// Mean over the batch of -ln sigmoid(y_ui - y_uj), y = row dot product.
template <typename Real>
Var loss_bpr(Tape<Real>& tape, Var user_reps, Var item_reps, const TripletBatch& batch);

// Same form on CF representations.
template <typename Real>
Var loss_bpr_cf(Tape<Real>& tape, Var user_cf, Var item_cf, const TripletBatch& batch);

struct LossBreakdown {
  double l_bpr = 0;
  double l_bpr_c = 0;
  double l_gac = 0;
  double l_pac = 0;
  double l_reg = 0;
  double total = 0;
};

struct LossWeights {
  double lambda_bpr_cf = 1.0;
  double lambda_cl = 0.1;
  double lambda_reg = 1e-5;
};

struct LossVars {
  Var bpr, bpr_c, gac, pac, reg, total;
};

// total = bpr + l1 * bpr_c + l2 * (gac + pac) + l3 * reg; the l2 term is
// omitted under no_cl.
template <typename Real>
Var total_loss(Tape<Real>& tape, Var bpr, Var bpr_c, Var gac, Var pac, Var reg,
               const LossWeights& weights, const AblationFlags& flags);

template <typename Real>
LossBreakdown read_breakdown(const Tape<Real>& tape, const LossVars& vars);

// The full model: parameters plus the graphs they propagate over.
template <typename Real>
class KdarModel {
 public:
  struct Forward {
    Var user_emb, item_emb, entity_emb, relation_emb, w_k, w_q;
    Var user_cf, item_cf;
    KgRepresentations<Real> kg;
    Var item_kg, user_kg;
    Var messages, alpha, item_weighted_attributes;
    Var user_pref, item_fusion;
    Var user_enhanced, item_enhanced;
    Var user_final, item_final;
  };

  KdarModel(const InteractionTable& table, const KnowledgeGraphStore& kg, Hyperparameters hyper,
            AblationFlags flags, InverseTripletPolicy policy = {});

  // Xavier-uniform initialization of every parameter.
  void initialize(std::uint64_t seed);

  Forward forward(Tape<Real>& tape);
  LossVars loss(Tape<Real>& tape, const Forward& fwd, const TripletBatch& batch) const;

  // Final user and item representations, computed without keeping the tape.
  std::pair<Matrix<Real>, Matrix<Real>> final_representations();

  ParameterStore<Real>& parameters() { return params_; }
  const ParameterStore<Real>& parameters() const { return params_; }
  const Hyperparameters& hyperparameters() const { return hyper_; }
  const AblationFlags& flags() const { return flags_; }
  const PropagationPlan& plan() const { return plan_; }
  const CollabAdjacency& collab() const { return collab_; }
  const KGAdjacency& knowledge() const { return knowledge_; }

  ParamId user_emb_id() const { return user_emb_; }
  ParamId item_emb_id() const { return item_emb_; }
  ParamId entity_emb_id() const { return entity_emb_; }
  ParamId relation_emb_id() const { return relation_emb_; }
  ParamId w_k_id() const { return w_k_; }
  ParamId w_q_id() const { return w_q_; }

 private:
  Hyperparameters hyper_;
  AblationFlags flags_;
  CollabAdjacency collab_;
  KGAdjacency knowledge_;
  PropagationPlan plan_;
  ParameterStore<Real> params_;
  ParamId user_emb_, item_emb_, entity_emb_, relation_emb_, w_k_, w_q_;
};

}  // namespace kdar
