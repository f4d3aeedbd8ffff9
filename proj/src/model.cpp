#include "sailpiw/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sailpiw/common.hpp"

namespace sailpiw {

GradientBuffer::GradientBuffer(const ModelState& state) {
  state.visit([&](const std::string& name, const Matrix& m) {
    names.push_back(name);
    blocks.emplace_back(m.rows(), m.cols());
  });
}

void GradientBuffer::zero() {
  for (auto& b : blocks) b.fill(0.0);
}

Matrix& GradientBuffer::operator[](std::string_view name) {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return blocks[k];
  throw std::out_of_range("GradientBuffer: no block " + std::string(name));
}

const Matrix& GradientBuffer::operator[](std::string_view name) const {
  return const_cast<GradientBuffer&>(*this)[name];
}

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, std_dev);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

Matrix glorot_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t k = 0; k < n; ++k) m(k, k) = 1.0;
  return m;
}

}  // namespace

ModelState init_model(const ModelDims& dims, std::size_t n_users, std::size_t n_items, const InitOptions& opts) {
  if (dims.d == 0 || dims.clusters == 0 || dims.hidden == 0 || dims.state_dim == 0) {
    throw std::invalid_argument("init_model: dimensions must be positive");
  }
  Rng rng(derive_seed(opts.seed, {0x1417}));
  ModelState s;
  s.dims = dims;
  s.user_emb = normal_matrix(n_users, dims.d, opts.embedding_std, rng);
  s.item_emb = normal_matrix(n_items, dims.d, opts.embedding_std, rng);
  for (std::size_t k = 0; k < dims.layers; ++k) s.layer_weights.push_back(glorot_matrix(dims.d, dims.d, rng));
  s.cluster_centers = Matrix(dims.clusters, dims.d);
  for (std::size_t m = 0; m < dims.clusters; ++m) s.cluster_transforms.push_back(identity(dims.d));
  s.neighbor_transform = identity(dims.d);
  s.wg_w1 = glorot_matrix(dims.state_dim, dims.hidden, rng);
  s.wg_b1 = Matrix(1, dims.hidden);
  s.wg_w2 = glorot_matrix(dims.hidden, 1, rng);
  s.wg_b2 = Matrix(1, 1);
  return s;
}

void grow_tables(ModelState& state, std::size_t n_users, std::size_t n_items, double embedding_std,
                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x6207}));
  if (n_users > state.n_users())
    state.user_emb.append_rows(normal_matrix(n_users - state.n_users(), state.dims.d, embedding_std, rng));
  if (n_items > state.n_items())
    state.item_emb.append_rows(normal_matrix(n_items - state.n_items(), state.dims.d, embedding_std, rng));
}

BoundState bind_state(ad::Tape& tape, const ModelState& state, bool trainable) {
  auto bind = [&](const Matrix& m) { return trainable ? tape.leaf(m) : tape.constant(m); };
  BoundState b;
  b.user_emb = bind(state.user_emb);
  b.item_emb = bind(state.item_emb);
  for (const auto& w : state.layer_weights) b.layer_weights.push_back(bind(w));
  b.cluster_centers = bind(state.cluster_centers);
  for (const auto& w : state.cluster_transforms) b.cluster_transforms.push_back(bind(w));
  b.neighbor_transform = bind(state.neighbor_transform);
  b.wg_w1 = bind(state.wg_w1);
  b.wg_b1 = bind(state.wg_b1);
  b.wg_w2 = bind(state.wg_w2);
  b.wg_b2 = bind(state.wg_b2);
  return b;
}

GradientBuffer collect_gradients(const ad::Tape& tape, const BoundState& bound, const ModelState& state) {
  GradientBuffer g(state);
  std::vector<ad::Var> vars{bound.user_emb, bound.item_emb};
  vars.insert(vars.end(), bound.layer_weights.begin(), bound.layer_weights.end());
  vars.push_back(bound.cluster_centers);
  vars.insert(vars.end(), bound.cluster_transforms.begin(), bound.cluster_transforms.end());
  vars.push_back(bound.neighbor_transform);
  vars.insert(vars.end(), {bound.wg_w1, bound.wg_b1, bound.wg_w2, bound.wg_b2});
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const Matrix& gr = tape.grad(vars[k]);
    if (!gr.empty()) g.blocks[k] = gr;
  }
  return g;
}

namespace {

ad::Var dropout(ad::Tape& tape, ad::Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  Matrix mask(x.rows(), x.cols());
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (double& v : mask.flat()) v = keep(rng) ? scale : 0.0;
  return ad::mul(x, tape.constant(std::move(mask)));
}

}  // namespace

LayerVars forward_embeddings(ad::Tape& tape, const BoundState& bound, const GraphBundle& graph, double dropout_p,
                             std::uint64_t seed) {
  LayerVars out;
  out.user.push_back(bound.user_emb);
  out.item.push_back(bound.item_emb);
  if (bound.layer_weights.empty()) return out;

  const std::size_t nu = bound.user_emb.rows(), ni = bound.item_emb.rows();
  if (graph.ui.size() > nu || graph.iu.size() > ni) {
    throw std::invalid_argument("forward_embeddings: graph has more nodes than the embedding tables");
  }
  Rng rng(seed);
  for (std::size_t k = 0; k < bound.layer_weights.size(); ++k) {
    const ad::Var hu = dropout(tape, out.user.back(), dropout_p, rng);
    const ad::Var hi = dropout(tape, out.item.back(), dropout_p, rng);
    const ad::Var agg_u = ad::add(hu, ad::neighbor_mean(hi, graph.ui, nu));
    const ad::Var agg_i = ad::add(hi, ad::neighbor_mean(hu, graph.iu, ni));
    out.user.push_back(ad::relu(ad::matmul(agg_u, bound.layer_weights[k])));
    out.item.push_back(ad::relu(ad::matmul(agg_i, bound.layer_weights[k])));
  }
  return out;
}

LayerEmbeddings forward_values(const ModelState& state, const GraphBundle& graph, double dropout_p,
                               std::uint64_t seed) {
  ad::Tape tape;
  const BoundState bound = bind_state(tape, state, false);
  const LayerVars vars = forward_embeddings(tape, bound, graph, dropout_p, seed);
  LayerEmbeddings out;
  for (const auto& v : vars.user) out.user.push_back(v.value());
  for (const auto& v : vars.item) out.item.push_back(v.value());
  return out;
}

ad::Var bpr_loss(ad::Var h_u, ad::Var h_pos, ad::Var h_neg, double l2_coef) {
  if (h_u.rows() == 0) throw std::invalid_argument("bpr_loss: empty batch");
  const ad::Var gap = ad::sub(ad::row_dot(h_u, h_pos), ad::row_dot(h_u, h_neg));
  ad::Var loss = ad::mean(ad::softplus(ad::scale(gap, -1.0)));
  if (l2_coef != 0.0) {
    const ad::Var norms =
        ad::add(ad::add(ad::row_dot(h_u, h_u), ad::row_dot(h_pos, h_pos)), ad::row_dot(h_neg, h_neg));
    loss = ad::add(loss, ad::scale(ad::mean(norms), l2_coef));
  }
  return loss;
}

AdamState::AdamState(const ModelState& state) {
  state.visit([&](const std::string&, const Matrix& p) {
    m.emplace_back(p.rows(), p.cols());
    v.emplace_back(p.rows(), p.cols());
  });
}

void adam_step(ModelState& state, const GradientBuffer& grads, double lr, AdamState& adam, const AdamOptions& opts) {
  std::size_t k = 0;
  state.visit([&](const std::string& name, const Matrix& p) {
    if (k >= grads.blocks.size() || !grads.blocks[k].same_shape(p)) {
      throw std::invalid_argument("adam_step: gradient block '" + name + "' does not match the parameter shape");
    }
    if (!all_finite(grads.blocks[k])) throw NumericError("adam_step: non-finite gradient in block '" + name + "'");
    ++k;
  });
  // Tables may have grown since the moments were allocated.
  k = 0;
  state.visit([&](const std::string&, const Matrix& p) {
    if (adam.m.size() <= k) {
      adam.m.emplace_back(p.rows(), p.cols());
      adam.v.emplace_back(p.rows(), p.cols());
    }
    if (!adam.m[k].same_shape(p)) {
      adam.m[k].append_rows(Matrix(p.rows() - adam.m[k].rows(), p.cols()));
      adam.v[k].append_rows(Matrix(p.rows() - adam.v[k].rows(), p.cols()));
    }
    ++k;
  });
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  k = 0;
  state.visit([&](const std::string&, Matrix& p) {
    const Matrix& g = grads.blocks[k];
    Matrix& m = adam.m[k];
    Matrix& v = adam.v[k];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * g[j];
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
    ++k;
  });
}

GradientCheckResult check_gradients(const LossFn& loss, const ModelState& state, std::size_t probes_per_block,
                                    std::uint64_t seed, double step) {
  GradientBuffer analytic(state);
  loss(state, &analytic);
  GradientCheckResult result;
  Rng rng(seed);
  ModelState probe = state;
  std::size_t block = 0;
  std::vector<Matrix*> params;
  probe.visit([&](const std::string&, Matrix& m) { params.push_back(&m); });
  for (Matrix* param : params) {
    if (param->size() == 0) {
      ++block;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, param->size() - 1);
    for (std::size_t p = 0; p < probes_per_block; ++p) {
      const std::size_t j = pick(rng);
      const double orig = (*param)[j];
      (*param)[j] = orig + step;
      const double up = loss(probe, nullptr);
      (*param)[j] = orig - step;
      const double down = loss(probe, nullptr);
      (*param)[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic.blocks[block][j] - numeric) / std::max(1.0, std::abs(numeric));
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = analytic.names[block] + "[" + std::to_string(j) + "]";
      }
      ++result.probes;
    }
    ++block;
  }
  return result;
}

}  // namespace sailpiw
