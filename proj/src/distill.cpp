#include "sailpiw/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sailpiw/cluster.hpp"
#include "sailpiw/common.hpp"

namespace sailpiw {

namespace {

struct NamedStrategy {
  std::string_view name;
  Strategy value;
};
constexpr NamedStrategy kStrategies[] = {
    {"none", Strategy::kNone}, {"graphsail", Strategy::kGraphSail}, {"sgct", Strategy::kSgct}, {"lwckd", Strategy::kLwcKd}};

struct NamedAblation {
  std::string_view name;
  Ablation value;
};
constexpr NamedAblation kAblations[] = {{"full", Ablation::kFull},       {"no_wg", Ablation::kNoWg},
                                        {"no_cluster", Ablation::kNoCluster}, {"no_trans", Ablation::kNoTrans},
                                        {"hard", Ablation::kHard},       {"no_piw", Ablation::kNoPiw}};

}  // namespace

Strategy parse_strategy(std::string_view name) {
  for (const auto& s : kStrategies)
    if (s.name == name) return s.value;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (graphsail|sgct|lwckd|none)");
}

Ablation parse_ablation(std::string_view name) {
  for (const auto& a : kAblations)
    if (a.name == name) return a.value;
  throw std::invalid_argument("unknown ablation '" + std::string(name) +
                              "' (full|no_wg|no_cluster|no_trans|hard|no_piw)");
}

std::string to_string(Strategy s) {
  for (const auto& x : kStrategies)
    if (x.value == s) return std::string(x.name);
  return "?";
}

std::string to_string(Ablation a) {
  for (const auto& x : kAblations)
    if (x.value == a) return std::string(x.name);
  return "?";
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> all{Ablation::kFull, Ablation::kNoWg, Ablation::kNoCluster,
                                         Ablation::kNoTrans, Ablation::kHard, Ablation::kNoPiw};
  return all;
}

void DistillSpec::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("lambda1 and lambda2 must be nonnegative");
  if (clusters == 0) throw std::invalid_argument("clusters must be positive");
  if (anchors == 0) throw std::invalid_argument("anchors must be positive");
  if (neighbor_len == 0) throw std::invalid_argument("neighbor_len must be positive");
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
}

bool DistillSpec::uses_cluster_kl() const {
  if (strategy == Strategy::kNone) return false;
  return ablation == Ablation::kFull || ablation == Ablation::kNoWg || ablation == Ablation::kNoTrans;
}

TeacherSnapshot make_teacher(const ModelState& prev, const GraphBundle& prev_graph, std::size_t anchors,
                             std::uint64_t seed) {
  TeacherSnapshot t;
  t.layers = forward_values(prev, prev_graph);
  t.graph = prev_graph;
  t.user_anchors = kmeans(t.layers.final_item(), std::min(anchors, t.n_items()), derive_seed(seed, {1})).centroids;
  t.item_anchors = kmeans(t.layers.final_user(), std::min(anchors, t.n_users()), derive_seed(seed, {2})).centroids;
  t.centers = prev.cluster_centers;
  return t;
}

std::uint64_t snapshot_hash(const TeacherSnapshot& t) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_bytes = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t k = 0; k < n; ++k) {
      h ^= b[k];
      h *= 1099511628211ull;
    }
  };
  auto mix_matrix = [&](const Matrix& m) {
    const std::size_t shape[2] = {m.rows(), m.cols()};
    mix_bytes(shape, sizeof(shape));
    mix_bytes(m.data(), m.size() * sizeof(double));
  };
  for (const auto& m : t.layers.user) mix_matrix(m);
  for (const auto& m : t.layers.item) mix_matrix(m);
  mix_matrix(t.user_anchors);
  mix_matrix(t.item_anchors);
  mix_matrix(t.centers);
  for (const auto& e : t.graph.edges) {
    mix_bytes(&e.user, sizeof(e.user));
    mix_bytes(&e.item, sizeof(e.item));
  }
  return h;
}

CandidateSets sample_candidate_sets(const GraphBundle& prev, std::size_t n_neg, std::uint64_t seed,
                                    bool similarity_graphs) {
  CandidateSets c;
  const std::size_t nu = prev.n_users(), ni = prev.n_items();
  c.user_items.resize(nu);
  c.user_item_pos.resize(nu);
  c.item_users.resize(ni);
  c.item_user_pos.resize(ni);
  for (std::size_t u = 0; u < nu; ++u) {
    if (prev.ui[u].empty()) continue;
    c.user_items[u] = sample_candidates(prev.ui[u], ni, n_neg, derive_seed(seed, {0, u}));
    c.user_item_pos[u] = prev.ui[u].size();
  }
  for (std::size_t i = 0; i < ni; ++i) {
    if (prev.iu[i].empty()) continue;
    c.item_users[i] = sample_candidates(prev.iu[i], nu, n_neg, derive_seed(seed, {1, i}));
    c.item_user_pos[i] = prev.iu[i].size();
  }
  if (!similarity_graphs) return c;
  auto similar = [&](const std::vector<std::vector<SimilarNeighbor>>& graph, std::size_t universe, std::uint64_t tag,
                     Adjacency& out, std::vector<std::size_t>& npos) {
    out.resize(graph.size());
    npos.resize(graph.size());
    for (std::size_t v = 0; v < graph.size(); ++v) {
      if (graph[v].empty()) continue;
      std::vector<std::size_t> pos;
      for (const auto& n : graph[v]) pos.push_back(n.node);
      out[v] = sample_candidates(pos, universe, n_neg, derive_seed(seed, {tag, v}), v);
      npos[v] = pos.size();
    }
  };
  similar(prev.uu, nu, 2, c.user_users, c.user_user_pos);
  similar(prev.ii, ni, 3, c.item_items, c.item_item_pos);
  return c;
}

DistillBatch warm_nodes(const std::vector<BprTriple>& batch, const TeacherSnapshot& teacher) {
  DistillBatch b;
  for (const auto& t : batch) {
    if (t.user < teacher.n_users()) b.users.push_back(t.user);
    if (t.pos < teacher.n_items()) b.items.push_back(t.pos);
    if (t.neg < teacher.n_items()) b.items.push_back(t.neg);
  }
  for (auto* v : {&b.users, &b.items}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return b;
}

namespace {

ad::Var zero_scalar(ad::Tape& tape) { return tape.constant(Matrix(1, 1)); }

// Mean over included rows of terms (optionally weighted). Excluded rows hold 0.
ad::Var weighted_mean(ad::Var terms, std::size_t included, const std::optional<ad::Var>& weights) {
  if (included == 0) return zero_scalar(terms.tape());
  const ad::Var x = weights ? ad::mul(terms, *weights) : terms;
  return ad::scale(ad::sum(x), 1.0 / static_cast<double>(included));
}

// Places `values` (one row per included node, in order) into an n x 1
// column with zeros for excluded nodes.
ad::Var expand(ad::Var values, const std::vector<bool>& included) {
  std::vector<std::size_t> offsets{0};
  for (bool in : included) offsets.push_back(offsets.back() + (in ? 1 : 0));
  return ad::segment_sum(values, std::move(offsets));
}

struct Contrastive {
  ad::Var terms;  // n x 1
  std::vector<bool> included;
  std::size_t count = 0;
};

// term(a) = logsumexp_{c in D(a)} s_ac - mean_{p in P(a)} s_ap with
// s = <student[a], teacher[c]> / tau. P(a) is the leading npos[a] of D(a).
Contrastive contrastive_terms(ad::Var student, const std::vector<std::size_t>& nodes, ad::Var teacher,
                              const Adjacency& cands, const std::vector<std::size_t>& npos, double tau) {
  Contrastive out;
  out.included.assign(nodes.size(), false);
  std::vector<std::size_t> ia, ib, seg{0}, pos_rows, pos_seg{0};
  std::vector<double> inv_pos;
  for (std::size_t b = 0; b < nodes.size(); ++b) {
    const std::size_t a = nodes[b];
    if (a >= cands.size() || a >= npos.size() || npos[a] == 0) continue;
    out.included[b] = true;
    ++out.count;
    for (std::size_t k = 0; k < cands[a].size(); ++k) {
      if (k < npos[a]) pos_rows.push_back(ia.size());
      ia.push_back(a);
      ib.push_back(cands[a][k]);
    }
    seg.push_back(ia.size());
    pos_seg.push_back(pos_rows.size());
    inv_pos.push_back(1.0 / static_cast<double>(npos[a]));
  }
  ad::Tape& tape = student.tape();
  if (out.count == 0) {
    out.terms = tape.constant(Matrix(nodes.size(), 1));
    return out;
  }
  const ad::Var dots = ad::scale(ad::pair_dots(student, std::move(ia), teacher, std::move(ib)), 1.0 / tau);
  const ad::Var lse = ad::segment_logsumexp(dots, std::move(seg));
  const ad::Var pos_mean = ad::mul(ad::segment_sum(ad::gather_rows(dots, std::move(pos_rows)), std::move(pos_seg)),
                                   tape.constant(Matrix::column(std::move(inv_pos))));
  out.terms = expand(ad::sub(lse, pos_mean), out.included);
  return out;
}

std::vector<double> log_softmax(const std::vector<double>& x) {
  double mx = -INFINITY;
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] - lz;
  return out;
}

// Per-node GraphSAIL terms: self + local + global. `student_self` and
// `student_other` are final-layer tables of the node's own and opposite side.
ad::Var graphsail_terms(ad::Var student_self, ad::Var student_other, const Matrix& teacher_self,
                        const Matrix& teacher_other, const Adjacency& neighbors, const Matrix& anchors,
                        const std::vector<std::size_t>& nodes) {
  ad::Tape& tape = student_self.tape();
  const std::size_t d = teacher_self.cols();
  const ad::Var hb = ad::gather_rows(student_self, nodes);
  const Matrix tb = gather_rows(teacher_self, nodes);

  const ad::Var self_term = ad::scale(ad::row_sum(ad::square(ad::sub(hb, tape.constant(tb)))), 1.0 / d);

  // Local: KL(teacher || student) over softmaxed dot products with t-1 neighbors.
  std::vector<std::size_t> ia, ib, seg{0}, pair_seg, per_node{0};
  std::vector<double> p_t, logp_t;
  for (std::size_t b = 0; b < nodes.size(); ++b) {
    const std::size_t a = nodes[b];
    static const std::vector<std::size_t> kNone;
    const auto& nb = a < neighbors.size() ? neighbors[a] : kNone;
    if (!nb.empty()) {
      std::vector<double> tdots;
      for (std::size_t j : nb) {
        ia.push_back(a);
        ib.push_back(j);
        pair_seg.push_back(seg.size() - 1);
        tdots.push_back(dot(teacher_self.row(a), teacher_other.row(j)));
      }
      for (double lp : log_softmax(tdots)) {
        logp_t.push_back(lp);
        p_t.push_back(std::exp(lp));
      }
      seg.push_back(ia.size());
    }
    per_node.push_back(ia.size());
  }
  ad::Var local = tape.constant(Matrix(nodes.size(), 1));
  if (!ia.empty()) {
    const ad::Var dots = ad::pair_dots(student_self, std::move(ia), student_other, std::move(ib));
    const ad::Var lse = ad::segment_logsumexp(dots, std::move(seg));
    const ad::Var logq = ad::sub(dots, ad::gather_rows(lse, std::move(pair_seg)));
    const ad::Var kl = ad::mul(tape.constant(Matrix::column(p_t)),
                               ad::sub(tape.constant(Matrix::column(logp_t)), logq));
    local = ad::segment_sum(kl, std::move(per_node));
  }

  // Global: KL(teacher || student) over softmaxed dot products with the anchors.
  Matrix tlogits(nodes.size(), anchors.rows());
  for (std::size_t b = 0; b < nodes.size(); ++b)
    for (std::size_t a = 0; a < anchors.rows(); ++a) tlogits(b, a) = dot(tb.row(b), anchors.row(a));
  Matrix tlogp(nodes.size(), anchors.rows()), tp(nodes.size(), anchors.rows());
  for (std::size_t b = 0; b < nodes.size(); ++b) {
    const auto lp = log_softmax(std::vector<double>(tlogits.row(b).begin(), tlogits.row(b).end()));
    for (std::size_t a = 0; a < lp.size(); ++a) {
      tlogp(b, a) = lp[a];
      tp(b, a) = std::exp(lp[a]);
    }
  }
  const ad::Var slogq = ad::log_softmax_rows(ad::matmul_nt(hb, tape.constant(anchors)));
  const ad::Var global =
      ad::row_sum(ad::mul(tape.constant(std::move(tp)), ad::sub(tape.constant(std::move(tlogp)), slogq)));

  return ad::add(ad::add(self_term, local), global);
}

void check_weights(const std::optional<ad::Var>& weights, std::size_t n) {
  if (weights && weights->rows() != n) throw std::invalid_argument("distillation weights do not match batch users");
}

}  // namespace

DistillTerms graphsail_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                            std::optional<ad::Var> weights) {
  check_weights(weights, batch.users.size());
  ad::Tape& tape = student.user.back().tape();
  DistillTerms out{zero_scalar(tape), zero_scalar(tape)};
  const ad::Var su = student.user.back(), si = student.item.back();
  if (!batch.users.empty()) {
    const ad::Var t = graphsail_terms(su, si, teacher.layers.final_user(), teacher.layers.final_item(),
                                      teacher.graph.ui, teacher.user_anchors, batch.users);
    out.user = weighted_mean(t, batch.users.size(), weights);
  }
  if (!batch.items.empty()) {
    const ad::Var t = graphsail_terms(si, su, teacher.layers.final_item(), teacher.layers.final_user(),
                                      teacher.graph.iu, teacher.item_anchors, batch.items);
    out.item = weighted_mean(t, batch.items.size(), std::nullopt);
  }
  return out;
}

DistillTerms sgct_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                       const CandidateSets& cands, double tau, std::optional<ad::Var> weights) {
  check_weights(weights, batch.users.size());
  ad::Tape& tape = student.user.front().tape();
  const ad::Var tu = tape.constant(teacher.layers.user.front());
  const ad::Var ti = tape.constant(teacher.layers.item.front());
  const Contrastive u =
      contrastive_terms(student.user.front(), batch.users, ti, cands.user_items, cands.user_item_pos, tau);
  const Contrastive i =
      contrastive_terms(student.item.front(), batch.items, tu, cands.item_users, cands.item_user_pos, tau);
  return {weighted_mean(u.terms, u.count, weights), weighted_mean(i.terms, i.count, std::nullopt)};
}

DistillTerms lwckd_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                        const CandidateSets& cands, double tau, std::optional<ad::Var> weights) {
  check_weights(weights, batch.users.size());
  const std::size_t layers = std::min(student.user.size(), teacher.layers.user.size());
  ad::Tape& tape = student.user.front().tape();
  ad::Var user_sum, item_sum;
  std::vector<bool> user_in(batch.users.size(), false), item_in(batch.items.size(), false);
  auto accumulate = [](ad::Var& total, ad::Var x) { total = total.valid() ? ad::add(total, x) : x; };
  auto merge = [](std::vector<bool>& into, const std::vector<bool>& from) {
    for (std::size_t k = 0; k < into.size(); ++k) into[k] = into[k] || from[k];
  };
  for (std::size_t k = 0; k < layers; ++k) {
    const ad::Var tu = tape.constant(teacher.layers.user[k]);
    const ad::Var ti = tape.constant(teacher.layers.item[k]);
    const Contrastive ui =
        contrastive_terms(student.user[k], batch.users, ti, cands.user_items, cands.user_item_pos, tau);
    const Contrastive uu =
        contrastive_terms(student.user[k], batch.users, tu, cands.user_users, cands.user_user_pos, tau);
    const Contrastive iu =
        contrastive_terms(student.item[k], batch.items, tu, cands.item_users, cands.item_user_pos, tau);
    const Contrastive ii =
        contrastive_terms(student.item[k], batch.items, ti, cands.item_items, cands.item_item_pos, tau);
    accumulate(user_sum, ad::add(ui.terms, uu.terms));
    accumulate(item_sum, ad::add(iu.terms, ii.terms));
    merge(user_in, ui.included);
    merge(user_in, uu.included);
    merge(item_in, iu.included);
    merge(item_in, ii.included);
  }
  const double inv_layers = 1.0 / static_cast<double>(layers);
  const auto count = [](const std::vector<bool>& v) { return static_cast<std::size_t>(std::count(v.begin(), v.end(), true)); };
  const ad::Var user_avg = layers == 1 ? user_sum : ad::scale(user_sum, inv_layers);
  const ad::Var item_avg = layers == 1 ? item_sum : ad::scale(item_sum, inv_layers);
  return {weighted_mean(user_avg, count(user_in), weights), weighted_mean(item_avg, count(item_in), std::nullopt)};
}

DistillTerms distill_loss(const DistillSpec& spec, const LayerVars& student, const TeacherSnapshot& teacher,
                          const DistillBatch& batch, const CandidateSets& cands, std::optional<ad::Var> weights) {
  switch (spec.strategy) {
    case Strategy::kGraphSail:
      return graphsail_loss(student, teacher, batch, weights);
    case Strategy::kSgct:
      return sgct_loss(student, teacher, batch, cands, spec.tau, weights);
    case Strategy::kLwcKd:
      return lwckd_loss(student, teacher, batch, cands, spec.tau, weights);
    case Strategy::kNone:
      break;
  }
  ad::Tape& tape = student.user.front().tape();
  return {zero_scalar(tape), zero_scalar(tape)};
}

std::optional<PiwWeights> piw_weights(const DistillSpec& spec, const BoundState& bound, const LayerVars& student,
                                      const TeacherSnapshot& teacher, const std::vector<std::size_t>& users,
                                      const NeighborOrder* order) {
  if (!spec.uses_weights() || users.empty()) return std::nullopt;
  ad::Tape& tape = student.user.back().tape();
  const ad::Var now = ad::gather_rows(student.user.back(), users);
  const ad::Var prev = tape.constant(gather_rows(teacher.layers.final_user(), users));
  PiwWeights out;
  if (spec.ablation == Ablation::kNoCluster) {
    if (order == nullptr) throw std::invalid_argument("piw_weights: neighbor-state ablation needs a neighbor order");
    const ad::Var d_now = neighbor_state(now, student.item.back(), bound.neighbor_transform, users, *order,
                                         spec.neighbor_len);
    const ad::Var d_prev = neighbor_state(prev, tape.constant(teacher.layers.final_item()), bound.neighbor_transform,
                                          users, *order, spec.neighbor_len);
    out.s = state_vector(d_prev, d_now);
  } else {
    const ad::Var proj =
        anchor_projection(bound.cluster_centers, bound.cluster_transforms, spec.ablation != Ablation::kNoTrans);
    out.s = state_vector(interest_distribution(prev, proj), interest_distribution(now, proj));
  }
  if (spec.ablation == Ablation::kNoWg) {
    out.w_raw = ad::clamp_min(ad::row_sum(out.s), 1e-6);
  } else {
    out.w_raw = generate_weight(out.s, weight_gen_params(bound)).w_raw;
  }
  out.w = normalize_weights(out.w_raw);
  return out;
}

ad::Var compose_total_loss(ad::Var bpr, ad::Var kl, ad::Var du, ad::Var di, const DistillSpec& spec) {
  if (spec.strategy == Strategy::kNone) return bpr;
  ad::Var total = bpr;
  if (kl.valid() && spec.lambda1 != 0.0) total = ad::add(total, ad::scale(kl, spec.lambda1));
  if (spec.lambda2 != 0.0) {
    ad::Var d;
    if (du.valid()) d = du;
    if (di.valid()) d = d.valid() ? ad::add(d, di) : di;
    if (d.valid()) total = ad::add(total, ad::scale(d, spec.lambda2));
  }
  return total;
}

double compose_total_loss(double bpr, double kl, double du, double di, const DistillSpec& spec) {
  if (spec.strategy == Strategy::kNone) return bpr;
  return bpr + spec.lambda1 * kl + spec.lambda2 * (du + di);
}

}  // namespace sailpiw
