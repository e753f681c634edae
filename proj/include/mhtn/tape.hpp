#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mhtn/matrix.hpp"

namespace mhtn {

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape over dense matrices. Nodes are recorded in
// topological order (operands always precede their consumers), so one
// backward sweep from a scalar root visits every node exactly once.
class Tape {
 public:
  // pull: given the node's accumulated gradient, push contributions into the
  // operands via accumulate().
  using Pull = std::function<void(Tape&, const Matrix& upstream,
                                  const std::vector<Var>& args)>;

  // Leaf that never receives a gradient (inputs, frozen values).
  Var constant(Matrix value);

  // Differentiated leaf (parameters are staged through here).
  Var leaf(Matrix value);

  // Record an interior node. needs_grad is inherited from the operands.
  Var record(Matrix value, std::vector<Var> args, Pull pull);

  const Matrix& value(Var v) const;

  // Gradient of the last backward root w.r.t. v. Zero for untouched nodes.
  const Matrix& grad(Var v) const;

  // Accumulates d(root)/d(root)=1 backwards through the recorded program.
  // root must be 1x1.
  void backward(Var root);

  // During backward: adds g into v's gradient (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  bool needs_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    mutable Matrix grad;  // materialized lazily; empty means zero
    std::vector<Var> args;
    Pull pull;
    bool needs_grad = false;
  };

  const Node& at(Var v) const;

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ---- primitive operations ----

// x(n×k) · w(k×m) + bias(1×m) broadcast per row.
Var affine(Tape& t, Var x, Var w, Var bias);

Var matmul(Tape& t, Var a, Var b);

// Elementwise max(0, x); gradient passes only where x > 0.
Var relu(Tape& t, Var x);

Var add(Tape& t, Var a, Var b);

Var scale(Tape& t, Var x, double s);

// Scalar sum of all entries.
Var sum(Tape& t, Var x);

// Identity forward; backward multiplies the incoming gradient by -lambda.
Var gradient_reversal(Tape& t, Var x, double lambda);

// sum_i ||a_i - b_i||^2 over matching rows.
Var squared_row_distance_sum(Tape& t, Var a, Var b);

}  // namespace mhtn
