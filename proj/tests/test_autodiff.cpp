#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "sailpiw/autodiff.hpp"
#include "sailpiw/common.hpp"

using namespace sailpiw;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.flat()) v = u(rng);
  return m;
}

using ScalarFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

// Max relative error between the tape gradient and central differences.
double fd_error(const ScalarFn& f, const Matrix& x0) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(x0);
  tape.backward(f(tape, x));
  Matrix analytic = tape.grad(x);
  if (analytic.empty()) analytic = Matrix(x0.rows(), x0.cols());
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < x0.size(); ++k) {
    Matrix up = x0, down = x0;
    up[k] += h;
    down[k] -= h;
    ad::Tape t1, t2;
    const double fu = f(t1, t1.constant(up)).scalar();
    const double fd = f(t2, t2.constant(down)).scalar();
    const double numeric = (fu - fd) / (2 * h);
    worst = std::max(worst, std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace

TEST_CASE("op gradients match central differences") {
  const Matrix x = random_matrix(3, 4, 1, 0.2, 1.5);
  const Matrix w = random_matrix(4, 2, 2);
  const Matrix other = random_matrix(5, 4, 9);
  const Matrix row = random_matrix(1, 4, 3);
  const std::vector<std::vector<std::size_t>> adj = {{0, 2}, {}, {1}};
  const std::vector<std::pair<std::string, ScalarFn>> cases = {
      {"matmul", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::square(ad::matmul(a, t.constant(w)))); }},
      {"matmul_nt", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::square(ad::matmul_nt(a, t.constant(other)))); }},
      {"matmul_self", [](ad::Tape&, ad::Var a) { return ad::sum(ad::matmul_nt(a, a)); }},
      {"add_sub", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::sub(ad::add(a, a), ad::exp(a)))); }},
      {"add_row", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::square(ad::add_row(a, t.constant(row)))); }},
      {"mul_col",
       [](ad::Tape&, ad::Var a) {
         return ad::sum(ad::square(ad::mul_col(a, ad::gather_rows(ad::reshape(a, 12, 1), {0, 5, 7}))));
       }},
      {"reciprocal", [](ad::Tape&, ad::Var a) { return ad::sum(ad::reciprocal(a)); }},
      {"relu", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::relu(ad::add_scalar(a, -0.7)))); }},
      {"exp_log", [](ad::Tape&, ad::Var a) { return ad::sum(ad::mul(ad::exp(a), ad::log(a))); }},
      {"softplus", [](ad::Tape&, ad::Var a) { return ad::sum(ad::softplus(ad::scale(a, 3.0))); }},
      {"clamp_min", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::clamp_min(a, 0.81))); }},
      {"student_t", [](ad::Tape&, ad::Var a) { return ad::sum(ad::student_t_kernel(a, 2.5)); }},
      {"scale_by", [](ad::Tape&, ad::Var a) { return ad::scale_by(ad::sum(a), ad::mean(ad::square(a))); }},
      {"row_dot", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::row_dot(a, ad::exp(a)))); }},
      {"row_sum", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::row_sum(a))); }},
      {"sq_dist", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::log(ad::add_scalar(ad::sq_dist(a, t.constant(other)), 1.0))); }},
      {"sq_dist_self", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::sq_dist(a, a))); }},
      {"row_normalize", [](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::row_normalize(a))); }},
      {"softmax", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::mul(ad::softmax_rows(a), t.constant(x))); }},
      {"log_softmax", [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::mul(ad::log_softmax_rows(a), t.constant(x))); }},
      {"concat", [](ad::Tape&, ad::Var a) {
         const std::vector<ad::Var> parts{a, ad::exp(a)};
         return ad::sum(ad::square(ad::concat_rows(parts)));
       }},
      {"neighbor_mean", [&](ad::Tape&, ad::Var a) { return ad::sum(ad::square(ad::neighbor_mean(a, adj, 4))); }},
      {"pair_dots", [](ad::Tape&, ad::Var a) {
         return ad::sum(ad::square(ad::pair_dots(a, {0, 1, 2, 2}, ad::exp(a), {2, 1, 0, 2})));
       }},
      {"segment_logsumexp", [](ad::Tape&, ad::Var a) {
         return ad::sum(ad::square(ad::segment_logsumexp(ad::reshape(a, 12, 1), {0, 3, 4, 12})));
       }},
      {"segment_sum", [](ad::Tape&, ad::Var a) {
         return ad::sum(ad::square(ad::segment_sum(ad::reshape(a, 12, 1), {0, 5, 5, 12})));
       }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(fd_error(f, x) < 1e-7);
  }
}

TEST_CASE("constants never receive gradients") {
  ad::Tape tape;
  const ad::Var c = tape.constant(Matrix::from_rows({{1.0, 2.0}}));
  const ad::Var x = tape.leaf(Matrix::from_rows({{3.0, 4.0}}));
  const ad::Var y = ad::sum(ad::mul(c, x));
  CHECK_FALSE(c.requires_grad());
  CHECK(y.requires_grad());
  tape.backward(y);
  CHECK(tape.grad(c).empty());
  CHECK(tape.grad(x) == Matrix::from_rows({{1.0, 2.0}}));
}

TEST_CASE("softplus is stable for large arguments") {
  ad::Tape tape;
  const ad::Var v = ad::softplus(tape.constant(Matrix::from_rows({{-800.0, 0.0, 800.0}})));
  CHECK(v.value()(0, 0) == doctest::Approx(0.0));
  CHECK(v.value()(0, 1) == doctest::Approx(std::log(2.0)));
  CHECK(v.value()(0, 2) == doctest::Approx(800.0));
}

TEST_CASE("student-t kernel at nu=1 is 1/(1+d)") {
  ad::Tape tape;
  const ad::Var v = ad::student_t_kernel(tape.constant(Matrix::from_rows({{0.0, 1.0, 3.0}})), 1.0);
  CHECK(v.value()(0, 0) == doctest::Approx(1.0));
  CHECK(v.value()(0, 1) == doctest::Approx(0.5));
  CHECK(v.value()(0, 2) == doctest::Approx(0.25));
}

TEST_CASE("segment_logsumexp matches direct evaluation") {
  ad::Tape tape;
  const ad::Var x = tape.constant(Matrix::column({1.0, 2.0, 3.0, -1.0}));
  const ad::Var v = ad::segment_logsumexp(x, {0, 3, 4});
  CHECK(v.value()[0] == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))));
  CHECK(v.value()[1] == doctest::Approx(-1.0));
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Matrix(2, 2, 1.0));
  CHECK_THROWS(tape.backward(x));
}
