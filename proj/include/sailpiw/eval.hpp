#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sailpiw/data.hpp"
#include "sailpiw/matrix.hpp"
#include "sailpiw/model.hpp"

namespace sailpiw {

struct RecallResult {
  std::vector<std::size_t> users;   // evaluated dense user ids, ascending
  std::vector<double> per_user;     // aligned with users
  double mean = 0.0;
  std::size_t skipped_users = 0;    // test users unknown to the model
};

// Scores every item by user_emb . item_emb, drops items in mask[u] (sorted), ranks by
// score (ties by item id) and counts hits of test[u] in the top k. Test items
// that are also masked are dropped from test[u]; users left with no test
// items are not evaluated. Parallel over users when `threads` > 1.
RecallResult recall_at_k(const Matrix& user_emb, const Matrix& item_emb, const Adjacency& test,
                         const Adjacency* mask, std::size_t k, std::size_t threads = 1);

// Evaluation threads from SAILPIW_THREADS (default 1).
std::size_t eval_threads();

// Per-user sets of items seen in blocks 0..last, on `graph`'s id space.
Adjacency seen_items(const std::vector<GraphBundle>& graphs, std::size_t last);

// Final-layer scoring of `test` records against `graph`.
RecallResult evaluate_recall(const ModelState& state, const GraphBundle& graph, std::span<const InteractionRecord> test,
                             const Adjacency* mask, std::size_t k);

// Mean of per-user recall restricted to `users` (evaluated ones only).
std::optional<double> mean_recall_over(const RecallResult& r, const std::vector<std::size_t>& users);

// Softmax of raw category counts: e^{N_c} / sum e^{N_c'}.
std::vector<double> category_distribution(const std::vector<double>& counts);

// L2 distance between a user's category distributions in two record sets.
// Categories come from `categories` (all categories of both sets when empty).
// nullopt when the user is missing from either set.
std::optional<double> category_interest_shift(std::span<const InteractionRecord> prev,
                                              std::span<const InteractionRecord> now, std::int64_t user,
                                              std::vector<std::int64_t> categories = {});

// Linear-normalized histograms compared as (1/M) sum_m (I_m^t - I_m^{t-1})^2.
double iss_from_histograms(std::span<const double> prev, std::span<const double> now);

struct IssResult {
  std::vector<std::size_t> users;  // dense ids active in both blocks
  std::vector<double> scores;
  std::vector<std::size_t> item_cluster;
};

// K-means on teacher item embeddings, per-user cluster histograms of the
// items in `prev_by_user` and `now_by_user`, then ISS.
IssResult iss_scores(const Matrix& teacher_item_emb, const Adjacency& prev_by_user, const Adjacency& now_by_user,
                     std::size_t clusters, std::uint64_t seed);

struct CohortSplit {
  std::vector<std::size_t> static_users;   // lowest ISS
  std::vector<std::size_t> dynamic_users;  // highest ISS
  std::size_t eligible = 0;
};

// Bottom and top `fraction` of users by ISS (ties by user id). Throws when a
// cohort would be empty.
CohortSplit split_cohorts(const IssResult& iss, double fraction = 0.2);

struct CohortRecall {
  std::string model;
  double static_forward = 0.0;
  double dynamic_forward = 0.0;
  double static_backward = 0.0;
  double dynamic_backward = 0.0;
};

// Forward: next-block test half with training items masked. Backward:
// the previous block's interactions, unmasked, scored on the block-t graph.
CohortRecall cohort_recall(const std::string& name, const ModelState& state, const GraphBundle& graph,
                           const Adjacency& train_mask, std::span<const InteractionRecord> forward_test,
                           std::span<const InteractionRecord> backward_test, const CohortSplit& cohorts,
                           std::size_t k);

// (avg / avg_baseline - 1) * 100.
double improvement_percent(double avg, double baseline_avg);

// Fixed-width histogram over [lo, hi]; values outside are clamped.
std::vector<std::size_t> histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins);

}  // namespace sailpiw
