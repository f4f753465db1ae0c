#include "kdar/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "kdar/error.hpp"

namespace kdar {

void Hyperparameters::validate() const {
  std::vector<std::string> bad;
  if (dim < 1) bad.emplace_back("dim must be >= 1");
  if (layers < 1) bad.emplace_back("layers must be >= 1");
  if (!(temperature > 0)) bad.emplace_back("temperature must be > 0");
  if (!(lambda_bpr_cf >= 0)) bad.emplace_back("lambda_bpr_cf must be >= 0");
  if (!(lambda_cl >= 0)) bad.emplace_back("lambda_cl must be >= 0");
  if (!(lambda_reg >= 0)) bad.emplace_back("lambda_reg must be >= 0");
  if (!(learning_rate >= 0)) bad.emplace_back("learning_rate must be >= 0");
  if (!bad.empty()) {
    std::string msg = "invalid model configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

PropagationPlan make_propagation_plan(const CollabAdjacency& cg, const KGAdjacency& kg) {
  PropagationPlan p;
  p.num_users = cg.num_users;
  p.num_items = cg.num_items;
  p.num_entities = std::max(kg.num_entities, cg.num_items);
  p.num_relations = kg.num_relations;
  p.cg_users = cg.edge_users;
  p.cg_items = cg.edge_items;
  p.cg_coeff = cg.edge_coeff;

  for (Index h = 0; h < kg.num_entities; ++h) {
    const auto& nbrs = kg.head_neighbors[static_cast<std::size_t>(h)];
    if (nbrs.empty()) continue;
    const double w = 1.0 / static_cast<double>(nbrs.size());
    for (const auto& [r, t] : nbrs) {
      p.kg_heads.push_back(h);
      p.kg_relations.push_back(r);
      p.kg_tails.push_back(t);
      p.kg_weight.push_back(w);
    }
  }

  p.attr_count.assign(static_cast<std::size_t>(p.num_items), 0);
  for (Index i = 0; i < std::min(p.num_items, kg.num_entities); ++i) {
    for (const auto& [r, t] : kg.head_neighbors[static_cast<std::size_t>(i)]) {
      p.attr_items.push_back(i);
      p.attr_relations.push_back(r);
      p.attr_tails.push_back(t);
      ++p.attr_count[static_cast<std::size_t>(i)];
    }
  }

  p.user_attr_items.assign(static_cast<std::size_t>(p.num_users), 0);
  for (Index u = 0; u < cg.num_users; ++u) {
    const auto& items = cg.user_neighbors[static_cast<std::size_t>(u)];
    if (items.empty()) continue;
    const double w = 1.0 / static_cast<double>(items.size());
    for (Index i : items) {
      p.hist_users.push_back(u);
      p.hist_items.push_back(i);
      p.hist_weight.push_back(w);
      if (p.attr_count[static_cast<std::size_t>(i)] > 0) ++p.user_attr_items[static_cast<std::size_t>(u)];
    }
  }
  return p;
}

namespace {

template <typename Real>
std::vector<Real> as_real(const std::vector<double>& v) {
  return std::vector<Real>(v.begin(), v.end());
}

template <typename Real>
Var scalar_constant(Tape<Real>& tape, Real value) {
  Matrix<Real> m(1, 1);
  m(0, 0) = value;
  return tape.constant(std::move(m));
}

}  // namespace

template <typename Real>
CfRepresentations<Real> propagate_cg(Tape<Real>& tape, Var user_emb, Var item_emb,
                                     const PropagationPlan& plan, Index layers) {
  const auto coeff = as_real<Real>(plan.cg_coeff);
  Var xu = user_emb;
  Var xi = item_emb;
  Var su = xu;
  Var si = xi;
  for (Index l = 1; l <= layers; ++l) {
    Var next_i = tape.weighted_segment_sum(tape.gather_rows(xu, plan.cg_users), coeff,
                                           plan.cg_items, plan.num_items);
    Var next_u = tape.weighted_segment_sum(tape.gather_rows(xi, plan.cg_items), coeff,
                                           plan.cg_users, plan.num_users);
    xu = next_u;
    xi = next_i;
    su = tape.add(su, xu);
    si = tape.add(si, xi);
  }
  return {su, si};
}

template <typename Real>
KgRepresentations<Real> propagate_kg(Tape<Real>& tape, Var entity_emb, Var relation_emb,
                                     const PropagationPlan& plan, Index layers) {
  const auto weight = as_real<Real>(plan.kg_weight);
  KgRepresentations<Real> out;
  out.layers.push_back(entity_emb);
  out.entities = entity_emb;
  Var relations = tape.gather_rows(relation_emb, plan.kg_relations);
  for (Index l = 1; l <= layers; ++l) {
    Var msg = tape.mul(relations, tape.gather_rows(out.layers.back(), plan.kg_tails));
    Var next = tape.weighted_segment_sum(msg, weight, plan.kg_heads, plan.num_entities);
    out.layers.push_back(next);
    out.entities = tape.add(out.entities, next);
  }
  return out;
}

template <typename Real>
Var propagate_user_kg(Tape<Real>& tape, const KgRepresentations<Real>& kg,
                      const PropagationPlan& plan) {
  if (kg.layers.size() < 2) throw std::invalid_argument("propagate_user_kg: needs L >= 1");
  const auto weight = as_real<Real>(plan.hist_weight);
  Var sum{};
  for (std::size_t l = 1; l < kg.layers.size(); ++l) {
    Var layer = tape.weighted_segment_sum(tape.gather_rows(kg.layers[l - 1], plan.hist_items),
                                          weight, plan.hist_users, plan.num_users);
    sum = l == 1 ? layer : tape.add(sum, layer);
  }
  return sum;
}

template <typename Real>
Var attribute_messages(Tape<Real>& tape, Var entity_emb, Var relation_emb,
                       const PropagationPlan& plan) {
  return tape.mul(tape.gather_rows(relation_emb, plan.attr_relations),
                  tape.gather_rows(entity_emb, plan.attr_tails));
}

template <typename Real>
Var attention_weights(Tape<Real>& tape, Var entity_emb, Var messages, Var w_k, Var w_q,
                      const PropagationPlan& plan, bool uniform) {
  if (uniform) {
    Matrix<Real> alpha(static_cast<Index>(plan.attr_items.size()), 1);
    for (std::size_t k = 0; k < plan.attr_items.size(); ++k) {
      alpha(static_cast<Index>(k), 0) =
          Real(1) / static_cast<Real>(plan.attr_count[static_cast<std::size_t>(plan.attr_items[k])]);
    }
    return tape.constant(std::move(alpha));
  }
  const Index d = tape.value(entity_emb).cols();
  Var keys = tape.matmul(tape.gather_rows(entity_emb, plan.attr_items), w_k);
  Var queries = tape.matmul(messages, w_q);
  Var logits = tape.scale(tape.row_dot(keys, queries), Real(1) / std::sqrt(static_cast<Real>(d)));
  return tape.grouped_softmax(logits, plan.attr_items, plan.num_items);
}

template <typename Real>
Var weighted_attributes(Tape<Real>& tape, Var messages, Var alpha, const PropagationPlan& plan) {
  return tape.weighted_segment_sum(messages, alpha, plan.attr_items, plan.num_items);
}

template <typename Real>
Var user_preference(Tape<Real>& tape, Var item_weighted_attributes, const PropagationPlan& plan) {
  const std::vector<Real> ones(plan.hist_items.size(), Real(1));
  return tape.weighted_segment_sum(tape.gather_rows(item_weighted_attributes, plan.hist_items),
                                   ones, plan.hist_users, plan.num_users);
}

template <typename Real>
Var attribute_fusion(Tape<Real>& tape, Var entity_emb, Var item_weighted_attributes,
                     const PropagationPlan& plan) {
  return tape.add(tape.slice_rows(entity_emb, 0, plan.num_items), item_weighted_attributes);
}

template <typename Real>
Var alignment_contrast(Tape<Real>& tape, Var anchor, Var positive, Var negative,
                       std::span<const Index> ids, Real temperature) {
  if (ids.empty()) return scalar_constant(tape, Real(0));
  Var a = tape.gather_rows(anchor, ids);
  Var pos = tape.row_cosine(a, tape.gather_rows(positive, ids));
  Var neg = tape.row_cosine(a, tape.gather_rows(negative, ids));
  // -ln(e^{p/t} / (e^{p/t} + e^{n/t})) = -ln sigmoid((p - n) / t)
  Var margin = tape.scale(tape.sub(pos, neg), Real(1) / temperature);
  return tape.scale(tape.mean(tape.log_sigmoid(margin)), Real(-1));
}

template <typename Real>
Var loss_gac(Tape<Real>& tape, Var item_fusion, Var item_cf, Var item_kg,
             std::span<const Index> items, Real temperature) {
  return alignment_contrast(tape, item_fusion, item_cf, item_kg, items, temperature);
}

template <typename Real>
Var loss_pac(Tape<Real>& tape, Var user_pref, Var user_cf, Var user_kg,
             std::span<const Index> users, Real temperature) {
  return alignment_contrast(tape, user_pref, user_cf, user_kg, users, temperature);
}

template <typename Real>
std::pair<Var, Var> enhance(Tape<Real>& tape, Var user_cf, Var user_pref, Var item_cf,
                            Var item_fusion, const AblationFlags& flags) {
  if (flags.no_enhancement) return {user_cf, item_cf};
  return {tape.scale(tape.add(user_cf, user_pref), Real(0.5)),
          tape.scale(tape.add(item_cf, item_fusion), Real(0.5))};
}

template <typename Real>
Var final_representation(Tape<Real>& tape, Var enhanced, Var kg, const AblationFlags& flags) {
  if (flags.no_cg) return kg;
  return tape.concat_cols(enhanced, kg);
}

template <typename Real>
Real predict(std::span<const Real> user_final, std::span<const Real> item_final) {
  if (user_final.size() != item_final.size()) {
    throw std::invalid_argument("predict: representation widths differ (" +
                                std::to_string(user_final.size()) + " vs " +
                                std::to_string(item_final.size()) + ")");
  }
  Real s = 0;
  for (std::size_t k = 0; k < user_final.size(); ++k) s += user_final[k] * item_final[k];
  return s;
}

template <typename Real>
Var loss_bpr(Tape<Real>& tape, Var user_reps, Var item_reps, const TripletBatch& batch) {
  if (batch.size() == 0) return scalar_constant(tape, Real(0));
  Var u = tape.gather_rows(user_reps, batch.users);
  Var pos = tape.row_dot(u, tape.gather_rows(item_reps, batch.pos_items));
  Var neg = tape.row_dot(u, tape.gather_rows(item_reps, batch.neg_items));
  return tape.scale(tape.mean(tape.log_sigmoid(tape.sub(pos, neg))), Real(-1));
}

template <typename Real>
Var loss_bpr_cf(Tape<Real>& tape, Var user_cf, Var item_cf, const TripletBatch& batch) {
  return loss_bpr(tape, user_cf, item_cf, batch);
}

template <typename Real>
Var total_loss(Tape<Real>& tape, Var bpr, Var bpr_c, Var gac, Var pac, Var reg,
               const LossWeights& w, const AblationFlags& flags) {
  Var total = tape.add(bpr, tape.scale(bpr_c, static_cast<Real>(w.lambda_bpr_cf)));
  if (!flags.no_cl) {
    total = tape.add(total, tape.scale(tape.add(gac, pac), static_cast<Real>(w.lambda_cl)));
  }
  return tape.add(total, tape.scale(reg, static_cast<Real>(w.lambda_reg)));
}

template <typename Real>
LossBreakdown read_breakdown(const Tape<Real>& tape, const LossVars& v) {
  LossBreakdown b;
  b.l_bpr = static_cast<double>(tape.scalar(v.bpr));
  b.l_bpr_c = static_cast<double>(tape.scalar(v.bpr_c));
  b.l_gac = static_cast<double>(tape.scalar(v.gac));
  b.l_pac = static_cast<double>(tape.scalar(v.pac));
  b.l_reg = static_cast<double>(tape.scalar(v.reg));
  b.total = static_cast<double>(tape.scalar(v.total));
  return b;
}

// ---- KdarModel --------------------------------------------------------------

template <typename Real>
KdarModel<Real>::KdarModel(const InteractionTable& table, const KnowledgeGraphStore& kg,
                           Hyperparameters hyper, AblationFlags flags,
                           InverseTripletPolicy policy)
    : hyper_(hyper),
      flags_(flags),
      collab_(build_collab_adjacency(table)),
      knowledge_(build_kg_adjacency(kg, policy)),
      plan_(make_propagation_plan(collab_, knowledge_)) {
  hyper_.validate();
  const Index d = hyper_.dim;
  user_emb_ = params_.add("user_cf_emb", plan_.num_users, d);
  item_emb_ = params_.add("item_cf_emb", plan_.num_items, d);
  entity_emb_ = params_.add("entity_emb", plan_.num_entities, d);
  relation_emb_ = params_.add("relation_emb", plan_.num_relations, d);
  w_k_ = params_.add("w_k", d, d);
  w_q_ = params_.add("w_q", d, d);
}

template <typename Real>
void KdarModel<Real>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_.xavier_uniform(rng);
}

template <typename Real>
typename KdarModel<Real>::Forward KdarModel<Real>::forward(Tape<Real>& tape) {
  Forward f;
  f.user_emb = tape.parameter(params_, user_emb_);
  f.item_emb = tape.parameter(params_, item_emb_);
  f.entity_emb = tape.parameter(params_, entity_emb_);
  f.relation_emb = tape.parameter(params_, relation_emb_);
  f.w_k = tape.parameter(params_, w_k_);
  f.w_q = tape.parameter(params_, w_q_);

  const auto cf = propagate_cg(tape, f.user_emb, f.item_emb, plan_, hyper_.layers);
  f.user_cf = cf.users;
  f.item_cf = cf.items;
  f.kg = propagate_kg(tape, f.entity_emb, f.relation_emb, plan_, hyper_.layers);
  f.item_kg = tape.slice_rows(f.kg.entities, 0, plan_.num_items);
  f.user_kg = propagate_user_kg(tape, f.kg, plan_);

  f.messages = attribute_messages(tape, f.entity_emb, f.relation_emb, plan_);
  f.alpha = attention_weights(tape, f.entity_emb, f.messages, f.w_k, f.w_q, plan_,
                              flags_.no_attention);
  f.item_weighted_attributes = weighted_attributes(tape, f.messages, f.alpha, plan_);
  f.user_pref = user_preference(tape, f.item_weighted_attributes, plan_);
  f.item_fusion = attribute_fusion(tape, f.entity_emb, f.item_weighted_attributes, plan_);

  std::tie(f.user_enhanced, f.item_enhanced) =
      enhance(tape, f.user_cf, f.user_pref, f.item_cf, f.item_fusion, flags_);
  f.user_final = final_representation(tape, f.user_enhanced, f.user_kg, flags_);
  f.item_final = final_representation(tape, f.item_enhanced, f.item_kg, flags_);
  return f;
}

template <typename Real>
LossVars KdarModel<Real>::loss(Tape<Real>& tape, const Forward& f, const TripletBatch& batch) const {
  LossVars v;
  v.bpr = loss_bpr(tape, f.user_final, f.item_final, batch);
  v.bpr_c = loss_bpr_cf(tape, f.user_cf, f.item_cf, batch);

  if (flags_.no_cl) {
    v.gac = scalar_constant(tape, Real(0));
    v.pac = scalar_constant(tape, Real(0));
  } else {
    // Unique batch items with at least one attribute, and unique batch users
    // whose history carries attributes.
    std::vector<Index> items;
    items.reserve(batch.pos_items.size() + batch.neg_items.size());
    for (const auto* list : {&batch.pos_items, &batch.neg_items}) {
      for (Index i : *list) {
        if (plan_.attr_count[static_cast<std::size_t>(i)] > 0) items.push_back(i);
      }
    }
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());

    std::vector<Index> users;
    for (Index u : batch.users) {
      if (plan_.user_attr_items[static_cast<std::size_t>(u)] > 0) users.push_back(u);
    }
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());

    const auto tau = static_cast<Real>(hyper_.temperature);
    v.gac = loss_gac(tape, f.item_fusion, f.item_cf, f.item_kg, items, tau);
    v.pac = loss_pac(tape, f.user_pref, f.user_cf, f.user_kg, users, tau);
  }

  if (batch.size() == 0) {
    v.reg = scalar_constant(tape, Real(0));
  } else {
    Var reg = tape.add(tape.sum_squares(f.w_k), tape.sum_squares(f.w_q));
    reg = tape.add(reg, tape.sum_squares(tape.gather_rows(f.user_emb, batch.users)));
    for (const auto* list : {&batch.pos_items, &batch.neg_items}) {
      reg = tape.add(reg, tape.sum_squares(tape.gather_rows(f.item_emb, *list)));
      reg = tape.add(reg, tape.sum_squares(tape.gather_rows(f.entity_emb, *list)));
    }
    v.reg = tape.scale(reg, Real(1) / static_cast<Real>(batch.size()));
  }

  const LossWeights weights{hyper_.lambda_bpr_cf, hyper_.lambda_cl, hyper_.lambda_reg};
  v.total = total_loss(tape, v.bpr, v.bpr_c, v.gac, v.pac, v.reg, weights, flags_);
  return v;
}

template <typename Real>
std::pair<Matrix<Real>, Matrix<Real>> KdarModel<Real>::final_representations() {
  Tape<Real> tape;
  const Forward f = forward(tape);
  return {tape.value(f.user_final), tape.value(f.item_final)};
}

#define KDAR_INSTANTIATE(Real)                                                                  \
  template CfRepresentations<Real> propagate_cg(Tape<Real>&, Var, Var, const PropagationPlan&,  \
                                                Index);                                         \
  template KgRepresentations<Real> propagate_kg(Tape<Real>&, Var, Var, const PropagationPlan&,  \
                                                Index);                                         \
  template Var propagate_user_kg(Tape<Real>&, const KgRepresentations<Real>&,                   \
                                 const PropagationPlan&);                                       \
  template Var attribute_messages(Tape<Real>&, Var, Var, const PropagationPlan&);               \
  template Var attention_weights(Tape<Real>&, Var, Var, Var, Var, const PropagationPlan&, bool); \
  template Var weighted_attributes(Tape<Real>&, Var, Var, const PropagationPlan&);              \
  template Var user_preference(Tape<Real>&, Var, const PropagationPlan&);                       \
  template Var attribute_fusion(Tape<Real>&, Var, Var, const PropagationPlan&);                 \
  template Var alignment_contrast(Tape<Real>&, Var, Var, Var, std::span<const Index>, Real);    \
  template Var loss_gac(Tape<Real>&, Var, Var, Var, std::span<const Index>, Real);              \
  template Var loss_pac(Tape<Real>&, Var, Var, Var, std::span<const Index>, Real);              \
  template std::pair<Var, Var> enhance(Tape<Real>&, Var, Var, Var, Var, const AblationFlags&);  \
  template Var final_representation(Tape<Real>&, Var, Var, const AblationFlags&);               \
  template Real predict(std::span<const Real>, std::span<const Real>);                          \
  template Var loss_bpr(Tape<Real>&, Var, Var, const TripletBatch&);                            \
  template Var loss_bpr_cf(Tape<Real>&, Var, Var, const TripletBatch&);                         \
  template Var total_loss(Tape<Real>&, Var, Var, Var, Var, Var, const LossWeights&,             \
                          const AblationFlags&);                                                \
  template LossBreakdown read_breakdown(const Tape<Real>&, const LossVars&);                    \
  template class KdarModel<Real>;

KDAR_INSTANTIATE(float)
KDAR_INSTANTIATE(double)

#undef KDAR_INSTANTIATE

}  // namespace kdar
