#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sailpiw/autodiff.hpp"
#include "sailpiw/matrix.hpp"

namespace sailpiw {

// Student-t soft assignment of items to cluster anchors and its sharpened target.
struct ClusterAssignment {
  Matrix q;               // n_items x M
  Matrix p;               // n_items x M
  std::vector<double> f;  // f_m = sum_i q_im
  double nu = 1.0;
};

// q_im proportional to (1 + |h_i - mu_m|^2 / nu)^(-(nu+1)/2), rows normalized.
ad::Var soft_assign(ad::Var item_emb, ad::Var centers, double nu);
Matrix soft_assign(const Matrix& item_emb, const Matrix& centers, double nu);

std::vector<double> cluster_frequencies(const Matrix& q);

// p_im = (q_im^2 / f_m) / sum_m' (q_im'^2 / f_m'). A column with f_m = 0
// contributes nothing.
Matrix target_distribution(const Matrix& q);

ClusterAssignment assign_clusters(const Matrix& item_emb, const Matrix& centers, double nu);

// sum_i sum_m p log(p / q), 0 log 0 = 0, p held constant. q entries below
// 1e-12 are clamped (with a warning) where p > 0.
ad::Var clustering_kl_loss(ad::Var q, const Matrix& p);
double clustering_kl_value(const Matrix& q, const Matrix& p);

struct KMeansResult {
  Matrix centroids;                    // k x d
  std::vector<std::size_t> assignment;  // per point
  std::size_t iterations = 0;
};

// Lloyd iterations from k-means++ seeding. Clusters that empty out are
// re-seeded from the points farthest from their current centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 50);

// Initial anchors for a block: k-means centroids of the teacher item embeddings.
Matrix init_centers(const Matrix& teacher_item_emb, std::size_t clusters, std::uint64_t seed);

// Means of student embeddings over clusters fixed by `assignment`. An empty
// cluster keeps its row from `previous` (zeros when none is given).
Matrix centers_from_assignment(const Matrix& student_item_emb, const std::vector<std::size_t>& assignment,
                               std::size_t clusters, const Matrix* previous = nullptr);

// K-means on teacher embeddings, then per-cluster means of the student's.
Matrix hard_centers(const Matrix& teacher_item_emb, const Matrix& student_item_emb, std::size_t clusters,
                    std::uint64_t seed, const Matrix* previous = nullptr);

}  // namespace sailpiw
