#include "sailpiw/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "sailpiw/cluster.hpp"
#include "sailpiw/common.hpp"

namespace sailpiw {

namespace {

// Recall of one user, or nullopt when nothing remains to be found.
std::optional<double> user_recall(std::size_t u, const Matrix& user_emb, const Matrix& item_emb,
                                  const std::vector<std::size_t>& test_items, const std::vector<std::size_t>* mask,
                                  std::size_t k, std::vector<std::pair<double, std::size_t>>& scratch) {
  std::vector<std::size_t> wanted;
  for (std::size_t i : test_items) {
    if (i >= item_emb.rows()) continue;
    if (mask && std::binary_search(mask->begin(), mask->end(), i)) continue;
    wanted.push_back(i);
  }
  if (wanted.empty()) return std::nullopt;
  scratch.clear();
  const auto hu = user_emb.row(u);
  for (std::size_t i = 0; i < item_emb.rows(); ++i) {
    if (mask && std::binary_search(mask->begin(), mask->end(), i)) continue;
    scratch.emplace_back(dot(hu, item_emb.row(i)), i);
  }
  const std::size_t top = std::min(k, scratch.size());
  auto better = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(top), scratch.end(), better);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r)
    if (std::binary_search(wanted.begin(), wanted.end(), scratch[r].second)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(wanted.size());
}

}  // namespace

RecallResult recall_at_k(const Matrix& user_emb, const Matrix& item_emb, const Adjacency& test,
                         const Adjacency* mask, std::size_t k, std::size_t threads) {
  const std::size_t n = std::min(test.size(), user_emb.rows());
  std::vector<std::optional<double>> per(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::size_t>> scratch;
    for (std::size_t u = begin; u < end; ++u) {
      if (test[u].empty()) continue;
      std::vector<std::size_t> sorted = test[u];
      std::sort(sorted.begin(), sorted.end());
      const auto* m = (mask && u < mask->size()) ? &(*mask)[u] : nullptr;
      per[u] = user_recall(u, user_emb, item_emb, sorted, m, k, scratch);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t * chunk, std::min(n, (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }
  RecallResult r;
  for (std::size_t u = 0; u < n; ++u) {
    if (!per[u]) continue;
    r.users.push_back(u);
    r.per_user.push_back(*per[u]);
  }
  for (std::size_t u = n; u < test.size(); ++u)
    if (!test[u].empty()) ++r.skipped_users;
  if (!r.per_user.empty())
    r.mean = std::accumulate(r.per_user.begin(), r.per_user.end(), 0.0) / static_cast<double>(r.per_user.size());
  return r;
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("SAILPIW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

Adjacency seen_items(const std::vector<GraphBundle>& graphs, std::size_t last) {
  if (last >= graphs.size()) throw std::out_of_range("seen_items: block index out of range");
  Adjacency seen(graphs[last].n_users());
  for (std::size_t b = 0; b <= last; ++b)
    for (const auto& e : graphs[b].edges) seen[e.user].push_back(e.item);
  for (auto& items : seen) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  return seen;
}

RecallResult evaluate_recall(const ModelState& state, const GraphBundle& graph, std::span<const InteractionRecord> test,
                             const Adjacency* mask, std::size_t k) {
  const auto emb = forward_values(state, graph);
  const auto mapped = map_interactions(graph, test);
  RecallResult r = recall_at_k(emb.final_user(), emb.final_item(), mapped.by_user, mask, k, eval_threads());
  std::set<std::int64_t> unknown;
  for (const auto& rec : test)
    if (!graph.users.find(rec.user_id)) unknown.insert(rec.user_id);
  r.skipped_users += unknown.size();
  return r;
}

std::optional<double> mean_recall_over(const RecallResult& r, const std::vector<std::size_t>& users) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t u : users) {
    const auto it = std::lower_bound(r.users.begin(), r.users.end(), u);
    if (it == r.users.end() || *it != u) continue;
    total += r.per_user[static_cast<std::size_t>(it - r.users.begin())];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::vector<double> category_distribution(const std::vector<double>& counts) {
  if (counts.empty()) return {};
  const double mx = *std::max_element(counts.begin(), counts.end());
  std::vector<double> out(counts.size());
  double z = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) z += out[c] = std::exp(counts[c] - mx);
  for (double& v : out) v /= z;
  return out;
}

std::optional<double> category_interest_shift(std::span<const InteractionRecord> prev,
                                              std::span<const InteractionRecord> now, std::int64_t user,
                                              std::vector<std::int64_t> categories) {
  if (categories.empty()) {
    std::set<std::int64_t> all;
    for (auto span : {prev, now})
      for (const auto& r : span)
        if (r.category_id) all.insert(*r.category_id);
    categories.assign(all.begin(), all.end());
  }
  if (categories.empty()) return std::nullopt;
  auto counts = [&](std::span<const InteractionRecord> rs, bool& active) {
    std::vector<double> c(categories.size(), 0.0);
    for (const auto& r : rs) {
      if (r.user_id != user) continue;
      active = true;
      if (!r.category_id) continue;
      const auto it = std::lower_bound(categories.begin(), categories.end(), *r.category_id);
      if (it != categories.end() && *it == *r.category_id) c[static_cast<std::size_t>(it - categories.begin())] += 1.0;
    }
    return c;
  };
  std::sort(categories.begin(), categories.end());
  bool in_prev = false, in_now = false;
  const auto a = category_distribution(counts(prev, in_prev));
  const auto b = category_distribution(counts(now, in_now));
  if (!in_prev || !in_now) return std::nullopt;
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

double iss_from_histograms(std::span<const double> prev, std::span<const double> now) {
  if (prev.size() != now.size() || prev.empty()) throw std::invalid_argument("iss: histogram sizes differ");
  const double sp = std::accumulate(prev.begin(), prev.end(), 0.0);
  const double sn = std::accumulate(now.begin(), now.end(), 0.0);
  if (sp <= 0.0 || sn <= 0.0) throw std::invalid_argument("iss: empty histogram");
  double s = 0.0;
  for (std::size_t m = 0; m < prev.size(); ++m) {
    const double d = now[m] / sn - prev[m] / sp;
    s += d * d;
  }
  return s / static_cast<double>(prev.size());
}

IssResult iss_scores(const Matrix& teacher_item_emb, const Adjacency& prev_by_user, const Adjacency& now_by_user,
                     std::size_t clusters, std::uint64_t seed) {
  IssResult out;
  out.item_cluster = kmeans(teacher_item_emb, clusters, seed).assignment;
  const std::size_t n = std::min(prev_by_user.size(), now_by_user.size());
  auto hist = [&](const std::vector<std::size_t>& items) {
    std::vector<double> h(clusters, 0.0);
    for (std::size_t i : items)
      if (i < out.item_cluster.size()) h[out.item_cluster[i]] += 1.0;
    return h;
  };
  for (std::size_t u = 0; u < n; ++u) {
    const auto hp = hist(prev_by_user[u]);
    const auto hn = hist(now_by_user[u]);
    if (std::accumulate(hp.begin(), hp.end(), 0.0) == 0.0 || std::accumulate(hn.begin(), hn.end(), 0.0) == 0.0)
      continue;
    out.users.push_back(u);
    out.scores.push_back(iss_from_histograms(hp, hn));
  }
  return out;
}

CohortSplit split_cohorts(const IssResult& iss, double fraction) {
  CohortSplit out;
  out.eligible = iss.users.size();
  const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(out.eligible)));
  if (take == 0) throw std::invalid_argument("split_cohorts: cohorts would be empty");
  std::vector<std::size_t> order(iss.users.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return iss.scores[a] != iss.scores[b] ? iss.scores[a] < iss.scores[b] : iss.users[a] < iss.users[b];
  });
  for (std::size_t k = 0; k < take; ++k) {
    out.static_users.push_back(iss.users[order[k]]);
    out.dynamic_users.push_back(iss.users[order[order.size() - 1 - k]]);
  }
  std::sort(out.static_users.begin(), out.static_users.end());
  std::sort(out.dynamic_users.begin(), out.dynamic_users.end());
  return out;
}

CohortRecall cohort_recall(const std::string& name, const ModelState& state, const GraphBundle& graph,
                           const Adjacency& train_mask, std::span<const InteractionRecord> forward_test,
                           std::span<const InteractionRecord> backward_test, const CohortSplit& cohorts,
                           std::size_t k) {
  const auto emb = forward_values(state, graph);
  const auto fwd = recall_at_k(emb.final_user(), emb.final_item(), map_interactions(graph, forward_test).by_user,
                               &train_mask, k, eval_threads());
  const auto bwd = recall_at_k(emb.final_user(), emb.final_item(), map_interactions(graph, backward_test).by_user,
                               nullptr, k, eval_threads());
  CohortRecall out;
  out.model = name;
  out.static_forward = mean_recall_over(fwd, cohorts.static_users).value_or(0.0);
  out.dynamic_forward = mean_recall_over(fwd, cohorts.dynamic_users).value_or(0.0);
  out.static_backward = mean_recall_over(bwd, cohorts.static_users).value_or(0.0);
  out.dynamic_backward = mean_recall_over(bwd, cohorts.dynamic_users).value_or(0.0);
  return out;
}

double improvement_percent(double avg, double baseline_avg) {
  if (baseline_avg == 0.0) return 0.0;
  return (avg / baseline_avg - 1.0) * 100.0;
}

std::vector<std::size_t> histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  std::vector<std::size_t> h(bins, 0);
  if (bins == 0 || !(hi > lo)) return h;
  for (double v : values) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
    const auto b = static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(bins - 1)));
    ++h[b];
  }
  return h;
}

}  // namespace sailpiw
