#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "sailpiw/autodiff.hpp"
#include "sailpiw/data.hpp"
#include "sailpiw/matrix.hpp"
#include "sailpiw/model.hpp"

namespace sailpiw {

// Rows V_m = mu_m W_m, so that G~_{u,m} = mu_m W_m h_u^T = (h_u V^T)_m.
// Without transforms V = mu.
ad::Var anchor_projection(ad::Var centers, const std::vector<ad::Var>& transforms, bool use_transforms);

// Row u of the result is softmax(h_u V^T).
ad::Var interest_distribution(ad::Var user_emb, ad::Var projection);

// Single-user convenience: softmax over m of mu_m W_m h^T.
std::vector<double> user_cluster_distribution(std::span<const double> h_u, const Matrix& centers,
                                              const std::vector<Matrix>& transforms);

// (g_prev - g_now) squared elementwise.
ad::Var state_vector(ad::Var g_prev, ad::Var g_now);

struct WeightGenParams {
  ad::Var w1, b1, w2, b2;
};
WeightGenParams weight_gen_params(const BoundState& bound);

struct WeightGenOutput {
  ad::Var z;      // n x l
  ad::Var w_raw;  // n x 1
};

// z = relu(s W1 + b1), w_raw = softplus(z W2 + b2), row per user.
WeightGenOutput generate_weight(ad::Var s, const WeightGenParams& params);

// w / mean(w); differentiable through the mean.
ad::Var normalize_weights(ad::Var w_raw);

// Neighbor lists for the neighbor-state ablation: each user's t-1 items,
// ordered by teacher score h_u . h_i (descending, ties by id) and cut to
// `length`.
using NeighborOrder = std::vector<std::vector<std::size_t>>;
NeighborOrder order_neighbors(const GraphBundle& prev_graph, const Matrix& teacher_user, const Matrix& teacher_item,
                              std::size_t length);

// d_u = [h_{i_1} W h_u^T, ..., h_{i_L} W h_u^T], zero-padded to `length`.
ad::Var neighbor_state(ad::Var user_rows, ad::Var item_emb, ad::Var transform,
                       const std::vector<std::size_t>& batch_users, const NeighborOrder& order, std::size_t length);

// Per-user diagnostic record, one user at a time.
struct UserShiftState {
  std::vector<double> g_now;
  std::vector<double> g_prev;
  std::vector<double> s;
  std::vector<double> z;
  double w_raw = 0.0;
};

// g_now from the student's final embedding, g_prev from the frozen teacher
// embedding, both against the current centers and transforms. Returns
// nullopt for a user with no teacher row.
std::optional<UserShiftState> shift_state_for_user(std::size_t user, const Matrix& student_user,
                                                   const Matrix& teacher_user, const ModelState& state,
                                                   bool use_transforms = true);

}  // namespace sailpiw
