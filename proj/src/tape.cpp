#include "mhtn/tape.hpp"

#include <sstream>
#include <utility>

#include "mhtn/errors.hpp"

namespace mhtn {

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + " contains a non-finite value");
}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw UsageError("variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::vector<Var> args, Pull pull) {
  bool needs = false;
  for (Var a : args) needs = needs || at(a).needs_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(args), std::move(pull), needs});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Matrix& Tape::value(Var v) const { return at(v).value; }

bool Tape::needs_grad(Var v) const { return at(v).needs_grad; }

const Matrix& Tape::grad(Var v) const {
  if (!ran_backward_) throw UsageError("grad() requested before backward()");
  const Node& n = at(v);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var root) {
  const Node& r = at(root);
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw UsageError("backward root must be a 1x1 scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id)].grad = Matrix::Ones(1, 1);
  for (std::int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.pull || n.grad.size() == 0) continue;
    n.pull(*this, n.grad, n.args);
  }
  ran_backward_ = true;
}

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows())
    throw ConfigError("matmul shape mismatch: " + shape_of(av) + " vs " + shape_of(bv));
  Matrix out = av * bv;
  return t.record(std::move(out), {a, b},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    tp.accumulate(args[0], up * tp.value(args[1]).transpose());
                    tp.accumulate(args[1], tp.value(args[0]).transpose() * up);
                  });
}

Var affine(Tape& t, Var x, Var w, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(bias);
  if (xv.cols() != wv.rows())
    throw ConfigError("affine: input is " + shape_of(xv) + " but weight is " + shape_of(wv));
  if (bv.rows() != 1 || bv.cols() != wv.cols())
    throw ConfigError("affine: bias is " + shape_of(bv) + " but weight is " + shape_of(wv));
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  return t.record(std::move(out), {x, w, bias},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    tp.accumulate(args[0], up * tp.value(args[1]).transpose());
                    tp.accumulate(args[1], tp.value(args[0]).transpose() * up);
                    tp.accumulate(args[2], up.colwise().sum());
                  });
}

Var relu(Tape& t, Var x) {
  Matrix out = t.value(x).cwiseMax(0.0);
  return t.record(std::move(out), {x},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    const Matrix& xv = tp.value(args[0]);
                    tp.accumulate(args[0], (xv.array() > 0.0).select(up, Matrix::Zero(up.rows(), up.cols())));
                  });
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ConfigError("add shape mismatch: " + shape_of(av) + " vs " + shape_of(bv));
  return t.record(av + bv, {a, b},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    tp.accumulate(args[0], up);
                    tp.accumulate(args[1], up);
                  });
}

Var scale(Tape& t, Var x, double s) {
  return t.record(t.value(x) * s, {x},
                  [s](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    tp.accumulate(args[0], s * up);
                  });
}

Var sum(Tape& t, Var x) {
  Matrix out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.record(std::move(out), {x},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    const Matrix& xv = tp.value(args[0]);
                    tp.accumulate(args[0], Matrix::Constant(xv.rows(), xv.cols(), up(0, 0)));
                  });
}

Var gradient_reversal(Tape& t, Var x, double lambda) {
  if (lambda < 0.0) throw UsageError("gradient_reversal: lambda must be >= 0");
  return t.record(t.value(x), {x},
                  [lambda](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    tp.accumulate(args[0], (-lambda) * up);
                  });
}

Var squared_row_distance_sum(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ConfigError("squared_row_distance_sum shape mismatch: " + shape_of(av) +
                      " vs " + shape_of(bv));
  Matrix out(1, 1);
  out(0, 0) = (av - bv).squaredNorm();
  return t.record(std::move(out), {a, b},
                  [](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
                    Matrix d = 2.0 * up(0, 0) * (tp.value(args[0]) - tp.value(args[1]));
                    tp.accumulate(args[0], d);
                    tp.accumulate(args[1], -d);
                  });
}

}  // namespace mhtn
