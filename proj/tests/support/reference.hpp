#pragma once

// Straight-loop reference implementations of the distillation losses. They
// share nothing with the tape-based versions beyond the input structs.

#include <cmath>
#include <vector>

#include "sailpiw/distill.hpp"

namespace ref {

using sailpiw::Adjacency;
using sailpiw::Matrix;

inline double dotp(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) z += e[k] = std::exp(x[k] - mx);
  for (double& v : e) v /= z;
  return e;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0) s += p[k] * std::log(p[k] / q[k]);
  return s;
}

inline double weight_of(const std::vector<double>& w, std::size_t b) { return w.empty() ? 1.0 : w[b]; }

// self + local + global for one node.
inline double graphsail_node(std::size_t a, const Matrix& s_self, const Matrix& s_other, const Matrix& t_self,
                             const Matrix& t_other, const Adjacency& nb, const Matrix& anchors) {
  double self = 0.0;
  for (std::size_t k = 0; k < s_self.cols(); ++k) self += std::pow(s_self(a, k) - t_self(a, k), 2);
  self /= static_cast<double>(s_self.cols());
  double local = 0.0;
  if (a < nb.size() && !nb[a].empty()) {
    std::vector<double> ts, ss;
    for (std::size_t j : nb[a]) {
      ts.push_back(dotp(t_self, a, t_other, j));
      ss.push_back(dotp(s_self, a, s_other, j));
    }
    local = kl(softmax(ts), softmax(ss));
  }
  std::vector<double> tg, sg;
  for (std::size_t c = 0; c < anchors.rows(); ++c) {
    tg.push_back(dotp(t_self, a, anchors, c));
    sg.push_back(dotp(s_self, a, anchors, c));
  }
  return self + local + kl(softmax(tg), softmax(sg));
}

struct Pair {
  double user = 0.0;
  double item = 0.0;
};

inline Pair graphsail(const sailpiw::LayerEmbeddings& s, const sailpiw::TeacherSnapshot& t,
                      const sailpiw::DistillBatch& batch, const std::vector<double>& w) {
  Pair out;
  for (std::size_t b = 0; b < batch.users.size(); ++b)
    out.user += weight_of(w, b) * graphsail_node(batch.users[b], s.final_user(), s.final_item(), t.layers.final_user(),
                                                 t.layers.final_item(), t.graph.ui, t.user_anchors);
  if (!batch.users.empty()) out.user /= static_cast<double>(batch.users.size());
  for (std::size_t i : batch.items)
    out.item += graphsail_node(i, s.final_item(), s.final_user(), t.layers.final_item(), t.layers.final_user(),
                               t.graph.iu, t.item_anchors);
  if (!batch.items.empty()) out.item /= static_cast<double>(batch.items.size());
  return out;
}

// -1/|P| sum_{p in P} log softmax_{c in D}(s_a . t_c / tau)[p]; 0 when P is empty.
inline double contrastive(std::size_t a, const Matrix& student, const Matrix& teacher, const Adjacency& cands,
                          const std::vector<std::size_t>& npos, double tau, bool* included) {
  *included = a < npos.size() && npos[a] > 0;
  if (!*included) return 0.0;
  std::vector<double> logits;
  for (std::size_t c : cands[a]) logits.push_back(dotp(student, a, teacher, c) / tau);
  const auto p = softmax(logits);
  double s = 0.0;
  for (std::size_t k = 0; k < npos[a]; ++k) s += -std::log(p[k]);
  return s / static_cast<double>(npos[a]);
}

inline Pair sgct(const sailpiw::LayerEmbeddings& s, const sailpiw::TeacherSnapshot& t,
                 const sailpiw::DistillBatch& batch, const sailpiw::CandidateSets& c, double tau,
                 const std::vector<double>& w) {
  Pair out;
  std::size_t nu = 0, ni = 0;
  for (std::size_t b = 0; b < batch.users.size(); ++b) {
    bool in = false;
    const double v = contrastive(batch.users[b], s.user[0], t.layers.item[0], c.user_items, c.user_item_pos, tau, &in);
    out.user += weight_of(w, b) * v;
    nu += in;
  }
  for (std::size_t i : batch.items) {
    bool in = false;
    out.item += contrastive(i, s.item[0], t.layers.user[0], c.item_users, c.item_user_pos, tau, &in);
    ni += in;
  }
  if (nu) out.user /= static_cast<double>(nu);
  if (ni) out.item /= static_cast<double>(ni);
  return out;
}

inline Pair lwckd(const sailpiw::LayerEmbeddings& s, const sailpiw::TeacherSnapshot& t,
                  const sailpiw::DistillBatch& batch, const sailpiw::CandidateSets& c, double tau,
                  const std::vector<double>& w) {
  const std::size_t layers = s.user.size();
  Pair out;
  std::size_t nu = 0, ni = 0;
  for (std::size_t b = 0; b < batch.users.size(); ++b) {
    const std::size_t u = batch.users[b];
    double total = 0.0;
    bool any = false;
    for (std::size_t k = 0; k < layers; ++k) {
      bool a = false, bb = false;
      total += contrastive(u, s.user[k], t.layers.item[k], c.user_items, c.user_item_pos, tau, &a);
      total += contrastive(u, s.user[k], t.layers.user[k], c.user_users, c.user_user_pos, tau, &bb);
      any = any || a || bb;
    }
    out.user += weight_of(w, b) * total / static_cast<double>(layers);
    nu += any;
  }
  for (std::size_t i : batch.items) {
    double total = 0.0;
    bool any = false;
    for (std::size_t k = 0; k < layers; ++k) {
      bool a = false, bb = false;
      total += contrastive(i, s.item[k], t.layers.user[k], c.item_users, c.item_user_pos, tau, &a);
      total += contrastive(i, s.item[k], t.layers.item[k], c.item_items, c.item_item_pos, tau, &bb);
      any = any || a || bb;
    }
    out.item += total / static_cast<double>(layers);
    ni += any;
  }
  if (nu) out.user /= static_cast<double>(nu);
  if (ni) out.item /= static_cast<double>(ni);
  return out;
}

}  // namespace ref
