#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sailpiw/autodiff.hpp"
#include "sailpiw/data.hpp"
#include "sailpiw/matrix.hpp"

namespace sailpiw {

struct ModelDims {
  std::size_t d = 128;      // embedding width
  std::size_t layers = 2;   // propagation layers R
  std::size_t clusters = 10;  // M
  std::size_t hidden = 16;  // weight-generator hidden size l
  std::size_t state_dim = 10;  // weight-generator input width (M, or the neighbor length)

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Every trainable parameter. Embedding rows are indexed by the cumulative
// dense ids of GraphBundle.
struct ModelState {
  ModelDims dims;
  Matrix user_emb;                         // n_users x d
  Matrix item_emb;                         // n_items x d
  std::vector<Matrix> layer_weights;       // R of d x d
  Matrix cluster_centers;                  // M x d
  std::vector<Matrix> cluster_transforms;  // M of d x d
  Matrix neighbor_transform;               // d x d, neighbor-state ablation only
  Matrix wg_w1;                            // state_dim x l
  Matrix wg_b1;                            // 1 x l
  Matrix wg_w2;                            // l x 1
  Matrix wg_b2;                            // 1 x 1

  std::size_t n_users() const { return user_emb.rows(); }
  std::size_t n_items() const { return item_emb.rows(); }

  // Visits (name, matrix) in a fixed order shared by GradientBuffer,
  // the optimizer and checkpoints.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    f(std::string("user_emb"), s.user_emb);
    f(std::string("item_emb"), s.item_emb);
    for (std::size_t k = 0; k < s.layer_weights.size(); ++k)
      f("layer_weights." + std::to_string(k), s.layer_weights[k]);
    f(std::string("cluster_centers"), s.cluster_centers);
    for (std::size_t m = 0; m < s.cluster_transforms.size(); ++m)
      f("cluster_transforms." + std::to_string(m), s.cluster_transforms[m]);
    f(std::string("neighbor_transform"), s.neighbor_transform);
    f(std::string("wg_w1"), s.wg_w1);
    f(std::string("wg_b1"), s.wg_b1);
    f(std::string("wg_w2"), s.wg_w2);
    f(std::string("wg_b2"), s.wg_b2);
  }
};

// One accumulator per ModelState field, in visit order.
struct GradientBuffer {
  std::vector<std::string> names;
  std::vector<Matrix> blocks;

  GradientBuffer() = default;
  explicit GradientBuffer(const ModelState& state);
  void zero();
  Matrix& operator[](std::string_view name);
  const Matrix& operator[](std::string_view name) const;
};

struct InitOptions {
  double embedding_std = 0.1;
  std::uint64_t seed = 0;
};

ModelState init_model(const ModelDims& dims, std::size_t n_users, std::size_t n_items, const InitOptions& opts);

// Appends freshly initialized rows for new users/items. Existing rows are untouched.
void grow_tables(ModelState& state, std::size_t n_users, std::size_t n_items, double embedding_std,
                 std::uint64_t seed);

// ModelState fields bound as tape leaves.
struct BoundState {
  ad::Var user_emb;
  ad::Var item_emb;
  std::vector<ad::Var> layer_weights;
  ad::Var cluster_centers;
  std::vector<ad::Var> cluster_transforms;
  ad::Var neighbor_transform;
  ad::Var wg_w1, wg_b1, wg_w2, wg_b2;
};

// Binds every parameter as a leaf, or as a constant when `trainable` is false.
BoundState bind_state(ad::Tape& tape, const ModelState& state, bool trainable = true);
GradientBuffer collect_gradients(const ad::Tape& tape, const BoundState& bound, const ModelState& state);

// Per-layer embeddings h_{.,k}, k = 0..R.
struct LayerVars {
  std::vector<ad::Var> user;
  std::vector<ad::Var> item;
};

struct LayerEmbeddings {
  std::vector<Matrix> user;
  std::vector<Matrix> item;
  const Matrix& final_user() const { return user.back(); }
  const Matrix& final_item() const { return item.back(); }
};

// h_{u,k+1} = relu((h_{u,k} + mean_{i in N(u)} h_{i,k}) W_k), symmetrically for
// items. Inverted dropout masks the layer inputs when dropout_p > 0.
LayerVars forward_embeddings(ad::Tape& tape, const BoundState& bound, const GraphBundle& graph, double dropout_p,
                             std::uint64_t seed);

// Value-only forward pass.
LayerEmbeddings forward_values(const ModelState& state, const GraphBundle& graph, double dropout_p = 0.0,
                               std::uint64_t seed = 0);

// mean_b softplus(-(h_u.h_pos - h_u.h_neg)) + l2_coef * mean_b(|h_u|^2 + |h_pos|^2 + |h_neg|^2)
ad::Var bpr_loss(ad::Var h_u, ad::Var h_pos, ad::Var h_neg, double l2_coef);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const ModelState& state);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One Adam update. Throws NumericError naming the block on a non-finite gradient.
void adam_step(ModelState& state, const GradientBuffer& grads, double lr, AdamState& adam,
               const AdamOptions& opts = {});

// Loss evaluated at `state`; fills `grads` with analytic gradients when non-null.
using LossFn = std::function<double(const ModelState& state, GradientBuffer* grads)>;

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t probes = 0;
};

// Central differences (step 1e-5) on `probes_per_block` random scalars of every
// parameter block; error = |analytic - numeric| / max(1, |numeric|).
GradientCheckResult check_gradients(const LossFn& loss, const ModelState& state, std::size_t probes_per_block,
                                    std::uint64_t seed, double step = 1e-5);

}  // namespace sailpiw
