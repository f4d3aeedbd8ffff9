#include "sailpiw/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sailpiw::ad {

const Matrix& Var::value() const { return tape_->value(*this); }
double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on non-scalar");
  return v[0];
}
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, nullptr); }
Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::push(Matrix value, bool requires_grad, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad,
                        requires_grad ? std::move(backprop) : Backprop{}});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw std::logic_error("Tape::backward: root must be 1 x 1");
  if (!requires_grad(root)) return;
  grad_ref(root)[0] += 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backprop || n.grad.empty()) continue;
    n.backprop(*this, n.value, n.grad);
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff shape error: ") + what);
}

Tape& same_tape(Var a, Var b) {
  require(&a.tape() == &b.tape(), "operands on different tapes");
  return a.tape();
}

// Unary elementwise op given f(x) and f'(x, y) where y = f(x).
template <class F, class D>
Var unary(Var a, F f, D df) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  return t.push(std::move(out), a.requires_grad(),
                [a, df](Tape& t, const Matrix& y, const Matrix& g) {
                  const Matrix& x = t.value(a);
                  Matrix& ga = t.grad_ref(a);
                  for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * df(x[k], y[k]);
                });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.cols() == B.rows(), "matmul inner dimension");
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      const double* br = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * br[j];
    }
  }
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
                  if (t.requires_grad(a)) {
                    Matrix& ga = t.grad_ref(a);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p)
                        ga(i, p) += dot(g.row(i), B.row(p));
                  }
                  if (t.requires_grad(b)) {
                    Matrix& gb = t.grad_ref(b);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A(i, p);
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
                      }
                  }
                });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.cols() == B.cols(), "matmul_nt inner dimension");
  const std::size_t n = A.rows(), m = B.rows();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = dot(A.row(i), B.row(j));
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  const std::size_t n = A.rows(), m = B.rows(), k = A.cols();
                  const bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                      const double gij = g(i, j);
                      if (gij == 0.0) continue;
                      if (need_a) {
                        Matrix& ga = t.grad_ref(a);
                        for (std::size_t p = 0; p < k; ++p) ga(i, p) += gij * B(j, p);
                      }
                      if (need_b) {
                        Matrix& gb = t.grad_ref(b);
                        for (std::size_t p = 0; p < k; ++p) gb(j, p) += gij * A(i, p);
                      }
                    }
                });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "add");
  Matrix out = a.value();
  out += b.value();
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(a)) t.grad_ref(a) += g;
                  if (t.requires_grad(b)) t.grad_ref(b) += g;
                });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "sub");
  Matrix out = a.value();
  const Matrix& B = b.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= B[k];
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(a)) t.grad_ref(a) += g;
                  if (t.requires_grad(b)) {
                    Matrix& gb = t.grad_ref(b);
                    for (std::size_t k = 0; k < g.size(); ++k) gb[k] -= g[k];
                  }
                });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "mul");
  Matrix out = a.value();
  const Matrix& B = b.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= B[k];
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  if (t.requires_grad(a)) {
                    Matrix& ga = t.grad_ref(a);
                    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * B[k];
                  }
                  if (t.requires_grad(b)) {
                    Matrix& gb = t.grad_ref(b);
                    for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * A[k];
                  }
                });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& A = a.value();
  const Matrix& R = row.value();
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row");
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += R(0, j);
  return t.push(std::move(out), a.requires_grad() || row.requires_grad(),
                [a, row](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(a)) t.grad_ref(a) += g;
                  if (t.requires_grad(row)) {
                    Matrix& gr = t.grad_ref(row);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                  }
                });
}

Var mul_col(Var a, Var col) {
  Tape& t = same_tape(a, col);
  const Matrix& A = a.value();
  const Matrix& C = col.value();
  require(C.cols() == 1 && C.rows() == A.rows(), "mul_col");
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) *= C(i, 0);
  return t.push(std::move(out), a.requires_grad() || col.requires_grad(),
                [a, col](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& C = t.value(col);
                  if (t.requires_grad(a)) {
                    Matrix& ga = t.grad_ref(a);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * C(i, 0);
                  }
                  if (t.requires_grad(col)) {
                    Matrix& gc = t.grad_ref(col);
                    for (std::size_t i = 0; i < g.rows(); ++i) gc(i, 0) += dot(g.row(i), A.row(i));
                  }
                });
}

Var scale(Var a, double k) {
  return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var scale_by(Var a, Var s) {
  Tape& t = same_tape(a, s);
  require(s.value().size() == 1, "scale_by expects a scalar");
  const double sv = s.value()[0];
  Matrix out = a.value();
  for (double& v : out.flat()) v *= sv;
  return t.push(std::move(out), a.requires_grad() || s.requires_grad(),
                [a, s](Tape& t, const Matrix&, const Matrix& g) {
                  const double sv = t.value(s)[0];
                  if (t.requires_grad(a)) {
                    Matrix& ga = t.grad_ref(a);
                    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * sv;
                  }
                  if (t.requires_grad(s)) {
                    const Matrix& A = t.value(a);
                    double acc = 0.0;
                    for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * A[k];
                    t.grad_ref(s)[0] += acc;
                  }
                });
}

Var reciprocal(Var a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp_min(Var a, double lo) {
  return unary(a, [lo](double x) { return x < lo ? lo : x; },
               [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

Var student_t_kernel(Var sq_dist, double nu) {
  const double power = -(nu + 1.0) / 2.0;
  return unary(
      sq_dist, [nu, power](double x) { return std::exp(power * std::log1p(x / nu)); },
      [nu, power](double x, double y) { return y * power / (nu + x); });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  for (std::size_t r : rows) require(r < A.rows(), "gather_rows index");
  Matrix out = sailpiw::gather_rows(A, rows);
  return t.push(std::move(out), a.requires_grad(),
                [a, rows = std::move(rows)](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& ga = t.grad_ref(a);
                  for (std::size_t r = 0; r < rows.size(); ++r) {
                    auto dst = ga.row(rows[r]);
                    auto src = g.row(r);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = parts.front().tape();
  Matrix out;
  bool rg = false;
  for (const Var& p : parts) {
    require(&p.tape() == &t, "concat_rows tapes");
    out.append_rows(p.value());
    rg = rg || p.requires_grad();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [inputs = std::move(inputs)](Tape& t, const Matrix&, const Matrix& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        Matrix& gp = t.grad_ref(p);
        for (std::size_t k = 0; k < n; ++k) gp[k] += g[offset + k];
      }
      offset += n;
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = a.tape();
  require(rows * cols == a.value().size(), "reshape size");
  std::vector<double> data(a.value().flat().begin(), a.value().flat().end());
  return t.push(Matrix(rows, cols, std::move(data)), a.requires_grad(),
                [a](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& ga = t.grad_ref(a);
                  for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
                });
}

Var neighbor_mean(Var a, const std::vector<std::vector<std::size_t>>& adjacency, std::size_t out_rows) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  const std::size_t c = A.cols();
  require(out_rows >= adjacency.size(), "neighbor_mean output rows");
  Matrix out(out_rows, c);
  for (std::size_t r = 0; r < adjacency.size(); ++r) {
    const auto& nb = adjacency[r];
    if (nb.empty()) continue;
    auto o = out.row(r);
    for (std::size_t j : nb) {
      require(j < A.rows(), "neighbor_mean index");
      auto src = A.row(j);
      for (std::size_t p = 0; p < c; ++p) o[p] += src[p];
    }
    const double inv = 1.0 / static_cast<double>(nb.size());
    for (double& v : o) v *= inv;
  }
  const auto* adj = &adjacency;
  return t.push(std::move(out), a.requires_grad(), [a, adj](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad_ref(a);
    const std::size_t c = g.cols();
    for (std::size_t r = 0; r < adj->size(); ++r) {
      const auto& nb = (*adj)[r];
      if (nb.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nb.size());
      auto src = g.row(r);
      for (std::size_t j : nb) {
        auto dst = ga.row(j);
        for (std::size_t p = 0; p < c; ++p) dst[p] += inv * src[p];
      }
    }
  });
}

Var row_dot(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.same_shape(B), "row_dot");
  Matrix out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) out(i, 0) = dot(A.row(i), B.row(i));
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  for (std::size_t i = 0; i < A.rows(); ++i) {
                    const double gi = g(i, 0);
                    if (t.requires_grad(a)) {
                      auto dst = t.grad_ref(a).row(i);
                      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += gi * B(i, p);
                    }
                    if (t.requires_grad(b)) {
                      auto dst = t.grad_ref(b).row(i);
                      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += gi * A(i, p);
                    }
                  }
                });
}

Var pair_dots(Var a, std::vector<std::size_t> ia, Var b, std::vector<std::size_t> ib) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(ia.size() == ib.size(), "pair_dots index lengths");
  require(A.cols() == B.cols(), "pair_dots widths");
  Matrix out(ia.size(), 1);
  for (std::size_t k = 0; k < ia.size(); ++k) {
    require(ia[k] < A.rows() && ib[k] < B.rows(), "pair_dots index");
    out(k, 0) = dot(A.row(ia[k]), B.row(ib[k]));
  }
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b, ia = std::move(ia), ib = std::move(ib)](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  const bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
                  const std::size_t c = A.cols();
                  for (std::size_t k = 0; k < ia.size(); ++k) {
                    const double gk = g(k, 0);
                    if (gk == 0.0) continue;
                    if (need_a) {
                      double* dst = t.grad_ref(a).data() + ia[k] * c;
                      const double* src = B.data() + ib[k] * c;
                      for (std::size_t p = 0; p < c; ++p) dst[p] += gk * src[p];
                    }
                    if (need_b) {
                      double* dst = t.grad_ref(b).data() + ib[k] * c;
                      const double* src = A.data() + ia[k] * c;
                      for (std::size_t p = 0; p < c; ++p) dst[p] += gk * src[p];
                    }
                  }
                });
}

Var row_sum(Var a) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  Matrix out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double acc = 0.0;
    for (double v : A.row(i)) acc += v;
    out(i, 0) = acc;
  }
  return t.push(std::move(out), a.requires_grad(), [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (double& v : ga.row(i)) v += g(i, 0);
  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  return t.push(Matrix::scalar(sailpiw::sum(a.value())), a.requires_grad(),
                [a](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& ga = t.grad_ref(a);
                  for (double& v : ga.flat()) v += g[0];
                });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of empty");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sq_dist(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.cols() == B.cols(), "sq_dist widths");
  Matrix out(A.rows(), B.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < B.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < A.cols(); ++p) {
        const double diff = A(i, p) - B(j, p);
        acc += diff * diff;
      }
      out(i, j) = acc;
    }
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& A = t.value(a);
                  const Matrix& B = t.value(b);
                  const bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
                  for (std::size_t i = 0; i < A.rows(); ++i)
                    for (std::size_t j = 0; j < B.rows(); ++j) {
                      const double gij = 2.0 * g(i, j);
                      for (std::size_t p = 0; p < A.cols(); ++p) {
                        const double diff = A(i, p) - B(j, p);
                        if (need_a) t.grad_ref(a)(i, p) += gij * diff;
                        if (need_b) t.grad_ref(b)(j, p) -= gij * diff;
                      }
                    }
                });
}

Var row_normalize(Var a) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double s = 0.0;
    for (double v : A.row(i)) s += v;
    for (double& v : out.row(i)) v /= s;
  }
  return t.push(std::move(out), a.requires_grad(), [a](Tape& t, const Matrix& y, const Matrix& g) {
    const Matrix& A = t.value(a);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double s = 0.0;
      for (double v : A.row(i)) s += v;
      // d y_ij / d a_ik = (delta_jk - y_ij) / s
      const double gy = dot(g.row(i), y.row(i));
      for (std::size_t k = 0; k < A.cols(); ++k) ga(i, k) += (g(i, k) - gy) / s;
    }
  });
}

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  Matrix out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const auto r = A.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += (out(i, j) = std::exp(r[j] - mx));
    for (double& v : out.row(i)) v /= s;
  }
  return t.push(std::move(out), a.requires_grad(), [a](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double gy = dot(g.row(i), y.row(i));
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - gy);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& A = a.value();
  Matrix out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const auto r = A.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = r[j] - lse;
  }
  return t.push(std::move(out), a.requires_grad(), [a](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gs = 0.0;
      for (double v : g.row(i)) gs += v;
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

Var segment_logsumexp(Var x, std::vector<std::size_t> offsets) {
  Tape& t = x.tape();
  const Matrix& X = x.value();
  require(X.cols() == 1, "segment_logsumexp expects a column");
  require(!offsets.empty() && offsets.back() == X.rows(), "segment_logsumexp offsets");
  const std::size_t S = offsets.size() - 1;
  Matrix out(S, 1);
  for (std::size_t s = 0; s < S; ++s) {
    require(offsets[s] < offsets[s + 1], "segment_logsumexp empty segment");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) mx = std::max(mx, X[k]);
    double acc = 0.0;
    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) acc += std::exp(X[k] - mx);
    out[s] = mx + std::log(acc);
  }
  return t.push(std::move(out), x.requires_grad(),
                [x, offsets = std::move(offsets)](Tape& t, const Matrix& y, const Matrix& g) {
                  const Matrix& X = t.value(x);
                  Matrix& gx = t.grad_ref(x);
                  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
                    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k)
                      gx[k] += g[s] * std::exp(X[k] - y[s]);
                });
}

Var segment_sum(Var x, std::vector<std::size_t> offsets) {
  Tape& t = x.tape();
  const Matrix& X = x.value();
  require(X.cols() == 1, "segment_sum expects a column");
  require(!offsets.empty() && offsets.back() == X.rows(), "segment_sum offsets");
  const std::size_t S = offsets.size() - 1;
  Matrix out(S, 1);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) out[s] += X[k];
  return t.push(std::move(out), x.requires_grad(),
                [x, offsets = std::move(offsets)](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& gx = t.grad_ref(x);
                  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
                    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) gx[k] += g[s];
                });
}

}  // namespace sailpiw::ad
