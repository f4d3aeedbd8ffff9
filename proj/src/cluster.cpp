#include "sailpiw/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sailpiw/common.hpp"

namespace sailpiw {

namespace {
constexpr double kMinProbability = 1e-12;
}

ad::Var soft_assign(ad::Var item_emb, ad::Var centers, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("soft_assign: nu must be positive");
  return ad::row_normalize(ad::student_t_kernel(ad::sq_dist(item_emb, centers), nu));
}

Matrix soft_assign(const Matrix& item_emb, const Matrix& centers, double nu) {
  ad::Tape tape;
  return soft_assign(tape.constant(item_emb), tape.constant(centers), nu).value();
}

std::vector<double> cluster_frequencies(const Matrix& q) {
  std::vector<double> f(q.cols(), 0.0);
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t m = 0; m < q.cols(); ++m) f[m] += q(i, m);
  return f;
}

Matrix target_distribution(const Matrix& q) {
  const auto f = cluster_frequencies(q);
  for (std::size_t m = 0; m < f.size(); ++m) {
    if (f[m] == 0.0) log_warn("target_distribution: cluster " + std::to_string(m) + " has zero frequency");
  }
  Matrix p(q.rows(), q.cols());
  std::vector<double> ratio(q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    bool uniform_ratio = true;
    for (std::size_t m = 0; m < q.cols(); ++m) {
      ratio[m] = f[m] > 0.0 ? q(i, m) / f[m] : 0.0;
      uniform_ratio = uniform_ratio && (f[m] > 0.0 && ratio[m] == ratio[0]);
    }
    // Equal ratios cancel in the normalization; p is q itself. Keeps the
    // single-item case exact instead of off by rounding.
    if (uniform_ratio) {
      std::copy(q.row(i).begin(), q.row(i).end(), p.row(i).begin());
      continue;
    }
    double total = 0.0;
    for (std::size_t m = 0; m < q.cols(); ++m) {
      p(i, m) = q(i, m) * ratio[m];
      total += p(i, m);
    }
    if (total > 0.0)
      for (double& v : p.row(i)) v /= total;
  }
  return p;
}

ClusterAssignment assign_clusters(const Matrix& item_emb, const Matrix& centers, double nu) {
  ClusterAssignment a;
  a.nu = nu;
  a.q = soft_assign(item_emb, centers, nu);
  a.f = cluster_frequencies(a.q);
  a.p = target_distribution(a.q);
  return a;
}

ad::Var clustering_kl_loss(ad::Var q, const Matrix& p) {
  if (!q.value().same_shape(p)) throw std::invalid_argument("clustering_kl_loss: shape mismatch");
  ad::Tape& tape = q.tape();
  double entropy_term = 0.0;
  bool clamped = false;
  const Matrix& qv = q.value();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) {
      entropy_term += p[k] * std::log(p[k]);
      clamped = clamped || qv[k] < kMinProbability;
    }
  }
  if (clamped) log_warn("clustering_kl_loss: q below 1e-12 where p > 0; clamped");
  const ad::Var log_q = ad::log(ad::clamp_min(q, kMinProbability));
  const ad::Var cross = ad::sum(ad::mul(log_q, tape.constant(p)));
  return ad::add_scalar(ad::scale(cross, -1.0), entropy_term);
}

double clustering_kl_value(const Matrix& q, const Matrix& p) {
  ad::Tape tape;
  return clustering_kl_loss(tape.constant(q), p).scalar();
}

namespace {

double sq_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

std::size_t nearest(const Matrix& centroids, std::span<const double> x, double* dist) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = sq_distance(centroids.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(0, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t c = 0; c < k; ++c) {
    Matrix row(1, points.cols());
    std::copy(points.row(pick).begin(), points.row(pick).end(), row.row(0).begin());
    centroids.append_rows(row);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_distance(points.row(i), centroids.row(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      // Every point coincides with a chosen centroid.
      pick = first(rng);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] <= 0.0 && pick > 0) --pick;
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (points.rows() < k) throw std::invalid_argument("kmeans: fewer points than clusters");
  Rng rng(seed);
  KMeansResult r;
  r.centroids = kmeanspp_seed(points, k, rng);
  const std::size_t n = points.rows(), d = points.cols();
  r.assignment.assign(n, k);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(r.centroids, points.row(i), &dist[i]);
      changed = changed || c != r.assignment[i];
      r.assignment[i] = c;
    }
    r.iterations = it + 1;
    if (!changed && it > 0) break;

    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      auto dst = sums.row(r.assignment[i]);
      for (std::size_t p = 0; p < d; ++p) dst[p] += points(i, p);
    }
    std::vector<bool> reseeded(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t p = 0; p < d; ++p) r.centroids(c, p) = sums(c, p) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: take the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!reseeded[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      reseeded[far] = true;
      std::copy(points.row(far).begin(), points.row(far).end(), r.centroids.row(c).begin());
    }
  }
  return r;
}

Matrix init_centers(const Matrix& teacher_item_emb, std::size_t clusters, std::uint64_t seed) {
  return kmeans(teacher_item_emb, clusters, seed).centroids;
}

Matrix centers_from_assignment(const Matrix& student_item_emb, const std::vector<std::size_t>& assignment,
                               std::size_t clusters, const Matrix* previous) {
  if (assignment.size() > student_item_emb.rows()) {
    throw std::invalid_argument("centers_from_assignment: more assignments than student rows");
  }
  const std::size_t d = student_item_emb.cols();
  Matrix centers(clusters, d);
  std::vector<std::size_t> counts(clusters, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    ++counts[assignment[i]];
    auto dst = centers.row(assignment[i]);
    for (std::size_t p = 0; p < d; ++p) dst[p] += student_item_emb(i, p);
  }
  for (std::size_t c = 0; c < clusters; ++c) {
    if (counts[c] > 0) {
      for (double& v : centers.row(c)) v /= static_cast<double>(counts[c]);
    } else if (previous != nullptr) {
      std::copy(previous->row(c).begin(), previous->row(c).end(), centers.row(c).begin());
    }
  }
  return centers;
}

Matrix hard_centers(const Matrix& teacher_item_emb, const Matrix& student_item_emb, std::size_t clusters,
                    std::uint64_t seed, const Matrix* previous) {
  const auto km = kmeans(teacher_item_emb, clusters, seed);
  return centers_from_assignment(student_item_emb, km.assignment, clusters, previous);
}

}  // namespace sailpiw
