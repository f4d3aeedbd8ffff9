#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sailpiw/autodiff.hpp"
#include "sailpiw/data.hpp"
#include "sailpiw/model.hpp"
#include "sailpiw/piw.hpp"

namespace sailpiw {

enum class Strategy { kNone, kGraphSail, kSgct, kLwcKd };
enum class Ablation { kFull, kNoWg, kNoCluster, kNoTrans, kHard, kNoPiw };

Strategy parse_strategy(std::string_view name);  // graphsail | sgct | lwckd | none
Ablation parse_ablation(std::string_view name);  // full | no_wg | no_cluster | no_trans | hard | no_piw
std::string to_string(Strategy s);
std::string to_string(Ablation a);
const std::vector<Ablation>& all_ablations();

struct DistillSpec {
  Strategy strategy = Strategy::kLwcKd;
  double lambda1 = 1.0;  // clustering KL
  double lambda2 = 1.0;  // distillation
  double tau = 0.1;
  std::size_t clusters = 10;
  std::size_t n_neg = 10;
  Ablation ablation = Ablation::kFull;
  std::size_t anchors = 10;        // global anchors for the GraphSAIL global term
  std::size_t neighbor_len = 20;   // state length in the neighbor-state ablation
  double nu = 1.0;

  void validate() const;
  // Whether the clustering KL term and learned anchors are in play.
  bool uses_cluster_kl() const;
  bool uses_weights() const { return strategy != Strategy::kNone && ablation != Ablation::kNoPiw; }
  // Width of the weight-generator input.
  std::size_t state_dim() const { return ablation == Ablation::kNoCluster ? neighbor_len : clusters; }

  friend bool operator==(const DistillSpec&, const DistillSpec&) = default;
};

// Frozen outputs of the previous block's model on the previous block's graph.
struct TeacherSnapshot {
  LayerEmbeddings layers;
  GraphBundle graph;
  Matrix user_anchors;  // k-means centroids of teacher item embeddings (user-side global term)
  Matrix item_anchors;  // k-means centroids of teacher user embeddings (item-side global term)
  Matrix centers;       // teacher cluster centers

  std::size_t n_users() const { return layers.user.empty() ? 0 : layers.final_user().rows(); }
  std::size_t n_items() const { return layers.item.empty() ? 0 : layers.final_item().rows(); }
};

TeacherSnapshot make_teacher(const ModelState& prev, const GraphBundle& prev_graph, std::size_t anchors,
                             std::uint64_t seed);

// FNV-1a over every value in the snapshot; used to assert immutability.
std::uint64_t snapshot_hash(const TeacherSnapshot& t);

// Contrastive candidate sets on the t-1 graphs. Every list starts with the
// positives, in neighbor order.
struct CandidateSets {
  Adjacency user_items;  // D_UI(u)
  Adjacency item_users;  // D_IU(i)
  Adjacency user_users;  // D_UU(u)
  Adjacency item_items;  // D_II(i)
  std::vector<std::size_t> user_item_pos, item_user_pos, user_user_pos, item_item_pos;
};
CandidateSets sample_candidate_sets(const GraphBundle& prev, std::size_t n_neg, std::uint64_t seed,
                                    bool similarity_graphs);

// Batch nodes that have teacher rows.
struct DistillBatch {
  std::vector<std::size_t> users;  // ascending, unique
  std::vector<std::size_t> items;  // ascending, unique
};
DistillBatch warm_nodes(const std::vector<BprTriple>& batch, const TeacherSnapshot& teacher);

struct DistillTerms {
  ad::Var user;  // 1 x 1
  ad::Var item;  // 1 x 1
};

// `weights` is n_users(batch) x 1 aligned with batch.users; nullopt means
// every weight is 1.
DistillTerms graphsail_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                            std::optional<ad::Var> weights);
DistillTerms sgct_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                       const CandidateSets& cands, double tau, std::optional<ad::Var> weights);
DistillTerms lwckd_loss(const LayerVars& student, const TeacherSnapshot& teacher, const DistillBatch& batch,
                        const CandidateSets& cands, double tau, std::optional<ad::Var> weights);

DistillTerms distill_loss(const DistillSpec& spec, const LayerVars& student, const TeacherSnapshot& teacher,
                          const DistillBatch& batch, const CandidateSets& cands, std::optional<ad::Var> weights);

// Per-user imitation weights for `users` under the configured ablation, plus
// the raw generator output and the state vector for diagnostics.
struct PiwWeights {
  ad::Var s;      // n x state_dim
  ad::Var w_raw;  // n x 1
  ad::Var w;      // n x 1, batch mean 1
};
std::optional<PiwWeights> piw_weights(const DistillSpec& spec, const BoundState& bound, const LayerVars& student,
                                      const TeacherSnapshot& teacher, const std::vector<std::size_t>& users,
                                      const NeighborOrder* order);

// bpr + lambda1 * kl + lambda2 * (du + di); strategy NONE keeps bpr only.
ad::Var compose_total_loss(ad::Var bpr, ad::Var kl, ad::Var du, ad::Var di, const DistillSpec& spec);
double compose_total_loss(double bpr, double kl, double du, double di, const DistillSpec& spec);

}  // namespace sailpiw
