#include "sailpiw/piw.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace sailpiw {

ad::Var anchor_projection(ad::Var centers, const std::vector<ad::Var>& transforms, bool use_transforms) {
  if (!use_transforms) return centers;
  if (transforms.size() != centers.rows())
    throw std::invalid_argument("anchor_projection: need one transform per center");
  std::vector<ad::Var> rows;
  rows.reserve(transforms.size());
  for (std::size_t m = 0; m < transforms.size(); ++m)
    rows.push_back(ad::matmul(ad::gather_rows(centers, {m}), transforms[m]));
  return ad::concat_rows(rows);
}

ad::Var interest_distribution(ad::Var user_emb, ad::Var projection) {
  return ad::softmax_rows(ad::matmul_nt(user_emb, projection));
}

std::vector<double> user_cluster_distribution(std::span<const double> h_u, const Matrix& centers,
                                              const std::vector<Matrix>& transforms) {
  ad::Tape tape;
  std::vector<ad::Var> ts;
  for (const auto& w : transforms) ts.push_back(tape.constant(w));
  Matrix h(1, h_u.size());
  std::copy(h_u.begin(), h_u.end(), h.row(0).begin());
  const ad::Var proj = anchor_projection(tape.constant(centers), ts, !transforms.empty());
  const Matrix g = interest_distribution(tape.constant(std::move(h)), proj).value();
  return {g.row(0).begin(), g.row(0).end()};
}

ad::Var state_vector(ad::Var g_prev, ad::Var g_now) { return ad::square(ad::sub(g_prev, g_now)); }

WeightGenParams weight_gen_params(const BoundState& bound) {
  return {bound.wg_w1, bound.wg_b1, bound.wg_w2, bound.wg_b2};
}

WeightGenOutput generate_weight(ad::Var s, const WeightGenParams& p) {
  if (s.cols() != p.w1.rows()) throw std::invalid_argument("generate_weight: state width does not match W1");
  WeightGenOutput out;
  out.z = ad::relu(ad::add_row(ad::matmul(s, p.w1), p.b1));
  out.w_raw = ad::softplus(ad::add_row(ad::matmul(out.z, p.w2), p.b2));
  return out;
}

ad::Var normalize_weights(ad::Var w_raw) {
  if (w_raw.rows() == 0) throw std::invalid_argument("normalize_weights: empty batch");
  return ad::scale_by(w_raw, ad::reciprocal(ad::mean(w_raw)));
}

NeighborOrder order_neighbors(const GraphBundle& prev_graph, const Matrix& teacher_user, const Matrix& teacher_item,
                              std::size_t length) {
  NeighborOrder order(prev_graph.ui.size());
  for (std::size_t u = 0; u < prev_graph.ui.size(); ++u) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i : prev_graph.ui[u]) scored.emplace_back(dot(teacher_user.row(u), teacher_item.row(i)), i);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t k = 0; k < std::min(length, scored.size()); ++k) order[u].push_back(scored[k].second);
  }
  return order;
}

ad::Var neighbor_state(ad::Var user_rows, ad::Var item_emb, ad::Var transform,
                       const std::vector<std::size_t>& batch_users, const NeighborOrder& order, std::size_t length) {
  if (user_rows.rows() != batch_users.size()) throw std::invalid_argument("neighbor_state: batch size mismatch");
  ad::Tape& tape = user_rows.tape();
  // Padded slots point at an appended zero row.
  const std::size_t zero_row = item_emb.rows();
  const std::vector<ad::Var> parts{item_emb, tape.constant(Matrix(1, item_emb.cols()))};
  const ad::Var items = ad::concat_rows(parts);
  const ad::Var projected = ad::matmul_nt(user_rows, transform);  // row b = h_u W^T
  std::vector<std::size_t> ia, ib;
  ia.reserve(batch_users.size() * length);
  ib.reserve(batch_users.size() * length);
  for (std::size_t b = 0; b < batch_users.size(); ++b) {
    static const std::vector<std::size_t> kNone;
    const auto& nb = batch_users[b] < order.size() ? order[batch_users[b]] : kNone;
    for (std::size_t k = 0; k < length; ++k) {
      ia.push_back(k < nb.size() ? nb[k] : zero_row);
      ib.push_back(b);
    }
  }
  return ad::reshape(ad::pair_dots(items, std::move(ia), projected, std::move(ib)), batch_users.size(), length);
}

std::optional<UserShiftState> shift_state_for_user(std::size_t user, const Matrix& student_user,
                                                   const Matrix& teacher_user, const ModelState& state,
                                                   bool use_transforms) {
  if (user >= teacher_user.rows()) return std::nullopt;
  if (user >= student_user.rows()) throw std::out_of_range("shift_state_for_user: unknown user");
  ad::Tape tape;
  const BoundState bound = bind_state(tape, state, false);
  const ad::Var proj = anchor_projection(bound.cluster_centers, bound.cluster_transforms, use_transforms);
  const ad::Var g_now = interest_distribution(ad::gather_rows(tape.constant(student_user), {user}), proj);
  const ad::Var g_prev = interest_distribution(ad::gather_rows(tape.constant(teacher_user), {user}), proj);
  const ad::Var s = state_vector(g_prev, g_now);
  const WeightGenOutput wg = generate_weight(s, weight_gen_params(bound));
  auto flat = [](const ad::Var& v) { return std::vector<double>(v.value().flat().begin(), v.value().flat().end()); };
  UserShiftState out;
  out.g_now = flat(g_now);
  out.g_prev = flat(g_prev);
  out.s = flat(s);
  out.z = flat(wg.z);
  out.w_raw = wg.w_raw.scalar();
  return out;
}

}  // namespace sailpiw
