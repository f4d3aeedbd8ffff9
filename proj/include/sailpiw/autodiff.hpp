#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's adjoint to its inputs. Nodes are created in
// topological order, so backward() is a single reverse sweep. Constants never
// allocate adjoints; anything built only from constants is itself constant.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sailpiw/matrix.hpp"

namespace sailpiw::ad {

class Tape;

class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Pushes the output adjoint into the inputs' adjoints.
  using Backprop = std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Adjoint of `v` after backward(); an empty matrix when nothing reached it.
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }

  // Seeds d(root)/d(root) = 1 for a 1 x 1 root and sweeps backwards.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  // Op-implementation interface.
  Var push(Matrix value, bool requires_grad, Backprop backprop);
  Matrix& grad_ref(Var v);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

// Shapes: "n x c" below means rows x cols of the value.

Var matmul(Var a, Var b);                // (n x k)(k x m)
Var matmul_nt(Var a, Var b);             // (n x k)(m x k)^T
Var add(Var a, Var b);                   // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                   // elementwise
Var add_row(Var a, Var row);             // n x c + broadcast 1 x c
Var mul_col(Var a, Var col);             // n x c scaled per row by n x 1
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var scale_by(Var a, Var s);              // a * s, s is 1 x 1
Var reciprocal(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var clamp_min(Var a, double lo);
// (1 + a/nu)^(-(nu+1)/2), evaluated through log1p for large nu.
Var student_t_kernel(Var sq_dist, double nu);

Var gather_rows(Var a, std::vector<std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Row r of the output is the mean of the rows of `a` listed in adjacency[r];
// rows with an empty or missing list are zero. The output has `out_rows` rows
// (at least adjacency.size()). `adjacency` must outlive backward().
Var neighbor_mean(Var a, const std::vector<std::vector<std::size_t>>& adjacency, std::size_t out_rows);

Var row_dot(Var a, Var b);               // n x 1
// out[k] = <a.row(ia[k]), b.row(ib[k])>
Var pair_dots(Var a, std::vector<std::size_t> ia, Var b, std::vector<std::size_t> ib);
Var row_sum(Var a);                      // n x 1
Var sum(Var a);                          // 1 x 1
Var mean(Var a);                         // 1 x 1
Var sq_dist(Var a, Var b);               // n x m, ||a_i - b_j||^2
Var row_normalize(Var a);                // rows divided by their sums
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// x is n x 1; segment s spans [offsets[s], offsets[s+1]). Segments must be non-empty.
Var segment_logsumexp(Var x, std::vector<std::size_t> offsets);
Var segment_sum(Var x, std::vector<std::size_t> offsets);

}  // namespace sailpiw::ad
