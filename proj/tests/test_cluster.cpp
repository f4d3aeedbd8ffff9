#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "sailpiw/cluster.hpp"
#include "sailpiw/common.hpp"

using namespace sailpiw;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

}  // namespace

TEST_CASE("soft assignment examples") {
  SUBCASE("equidistant item is uniform") {
    const Matrix centers = Matrix::from_rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    const Matrix q = soft_assign(Matrix::from_rows({{0, 0}}), centers, 1.0);
    for (std::size_t m = 0; m < 4; ++m) CHECK(q(0, m) == doctest::Approx(0.25));
  }
  SUBCASE("item at center 1, unit distance to center 2") {
    const Matrix q = soft_assign(Matrix::from_rows({{0, 0}}), Matrix::from_rows({{0, 0}, {1, 0}}), 1.0);
    CHECK(q(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(q(0, 1) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("large nu approaches the Gaussian kernel") {
    Rng rng(5);
    const Matrix x = random_matrix(6, 3, rng), c = random_matrix(4, 3, rng);
    const Matrix q = soft_assign(x, c, 1e6);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> g(4);
      double z = 0.0;
      for (std::size_t m = 0; m < 4; ++m) {
        double d = 0.0;
        for (std::size_t k = 0; k < 3; ++k) d += (x(i, k) - c(m, k)) * (x(i, k) - c(m, k));
        g[m] = std::exp(-0.5 * d);
        z += g[m];
      }
      for (std::size_t m = 0; m < 4; ++m) CHECK(q(i, m) == doctest::Approx(g[m] / z).epsilon(1e-4));
    }
  }
}

TEST_CASE("target distribution examples") {
  const Matrix q = Matrix::from_rows({{0.8, 0.2}, {0.2, 0.8}});
  const Matrix p = target_distribution(q);
  CHECK(p(0, 0) == doctest::Approx(0.64 / 0.68));
  CHECK(p(0, 0) == doctest::Approx(0.94118).epsilon(1e-5));
  CHECK(p(0, 1) == doctest::Approx(0.05882).epsilon(1e-4));
  CHECK(p(1, 1) == doctest::Approx(0.94118).epsilon(1e-5));

  const Matrix single = Matrix::from_rows({{0.1, 0.6, 0.3}});
  CHECK(target_distribution(single) == single);

  const Matrix hot = Matrix::from_rows({{0, 1, 0}, {1, 0, 0}});
  CHECK(target_distribution(hot) == hot);
}

TEST_CASE("KL loss values") {
  const Matrix q = Matrix::from_rows({{0.3, 0.7}, {0.5, 0.5}});
  CHECK(clustering_kl_value(q, q) == doctest::Approx(0.0));
  CHECK(clustering_kl_value(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{1.0, 0.0}})) ==
        doctest::Approx(std::log(2.0)));
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix qq = soft_assign(random_matrix(5, 3, rng), random_matrix(4, 3, rng), 1.0);
    CHECK(clustering_kl_value(qq, target_distribution(qq)) >= -1e-12);
  }
}

TEST_CASE("KL gradient reaches embeddings and centers only through q") {
  Rng rng(3);
  const Matrix x0 = random_matrix(5, 3, rng), c0 = random_matrix(3, 3, rng);
  const Matrix p = target_distribution(soft_assign(x0, c0, 1.0));
  auto loss = [&](const Matrix& x, const Matrix& c) {
    ad::Tape t;
    return clustering_kl_loss(soft_assign(t.constant(x), t.constant(c), 1.0), p).scalar();
  };
  ad::Tape tape;
  const ad::Var x = tape.leaf(x0), c = tape.leaf(c0);
  tape.backward(clustering_kl_loss(soft_assign(x, c, 1.0), p));
  const double h = 1e-6;
  for (std::size_t k = 0; k < x0.size(); ++k) {
    Matrix up = x0, dn = x0;
    up[k] += h;
    dn[k] -= h;
    CHECK(tape.grad(x)[k] == doctest::Approx((loss(up, c0) - loss(dn, c0)) / (2 * h)).epsilon(1e-6));
  }
  for (std::size_t k = 0; k < c0.size(); ++k) {
    Matrix up = c0, dn = c0;
    up[k] += h;
    dn[k] -= h;
    CHECK(tape.grad(c)[k] == doctest::Approx((loss(x0, up) - loss(x0, dn)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("assignment rows are distributions") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = assign_clusters(random_matrix(7, 4, rng, 2.0), random_matrix(3, 4, rng), 1.0 + trial % 3);
    for (std::size_t i = 0; i < 7; ++i) {
      double sq = 0.0, sp = 0.0;
      for (std::size_t m = 0; m < 3; ++m) {
        sq += a.q(i, m);
        sp += a.p(i, m);
        CHECK(a.q(i, m) >= 0.0);
        CHECK(a.p(i, m) <= 1.0);
      }
      CHECK(std::abs(sq - 1.0) < 1e-9);
      CHECK(std::abs(sp - 1.0) < 1e-9);
    }
    for (double f : a.f) CHECK(f > 0.0);
  }
}

TEST_CASE("k-means recovers separated blobs") {
  Rng rng(21);
  const Matrix truth = Matrix::from_rows({{10, 0}, {-10, 0}, {0, 10}, {0, -10}});
  Matrix pts(0, 2);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t b = 0; b < 4; ++b)
    for (int k = 0; k < 40; ++k) pts.append_rows(Matrix::from_rows({{truth(b, 0) + noise(rng), truth(b, 1) + noise(rng)}}));
  const auto km = kmeans(pts, 4, 77);
  for (std::size_t b = 0; b < 4; ++b) {
    double best = 1e9;
    for (std::size_t c = 0; c < 4; ++c)
      best = std::min(best, std::hypot(km.centroids(c, 0) - truth(b, 0), km.centroids(c, 1) - truth(b, 1)));
    CHECK(best < 0.5);
  }
  CHECK(init_centers(pts, 4, 77) == km.centroids);
}

TEST_CASE("k-means edge cases") {
  const Matrix pts = Matrix::from_rows({{0, 0}, {1, 5}, {-3, 2}});
  const auto km = kmeans(pts, 3, 4);
  std::set<std::vector<double>> got, want;
  for (std::size_t r = 0; r < 3; ++r) {
    got.insert({km.centroids(r, 0), km.centroids(r, 1)});
    want.insert({pts(r, 0), pts(r, 1)});
  }
  CHECK(got == want);

  // Duplicates: more clusters than distinct points still terminates.
  const Matrix dup = Matrix::from_rows({{1, 1}, {1, 1}, {1, 1}, {2, 2}});
  const auto kd = kmeans(dup, 3, 1);
  CHECK(kd.centroids.rows() == 3);
  CHECK(all_finite(kd.centroids));
  CHECK_THROWS(kmeans(dup, 5, 1));
}

TEST_CASE("hard centers") {
  Rng rng(2);
  const Matrix teacher = random_matrix(12, 3, rng);
  const auto km = kmeans(teacher, 3, 9);
  CHECK(hard_centers(teacher, teacher, 3, 9) == km.centroids);

  const Matrix student = random_matrix(12, 3, rng);
  const Matrix one = hard_centers(teacher, student, 1, 9);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 12; ++i) mean += student(i, k);
    CHECK(one(0, k) == doctest::Approx(mean / 12.0));
  }

  const Matrix s = Matrix::from_rows({{1, 2}, {3, 4}, {10, 0}, {5, 6}});
  const Matrix prev = Matrix::from_rows({{0, 0}, {0, 0}, {7, 7}});
  const Matrix c = centers_from_assignment(s, {0, 0, 1, 0}, 3, &prev);
  CHECK(c == Matrix::from_rows({{3, 4}, {10, 0}, {7, 7}}));
}
