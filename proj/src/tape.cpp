#include "dc3/tape.hpp"

#include <cmath>
#include <sstream>

namespace dc3 {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_fail(const std::string& op, const Matrix& a,
                             const Matrix& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

bool same_tape(Var a, Var b) { return a.tape == b.tape; }

}  // namespace

void require_finite(const std::string& op, const Matrix& m) {
  if (!m.allFinite())
    throw NumericError(op + ": non-finite output (" + shape_str(m) + ")");
}

int Tape::check(Var v) const {
  if (!v.valid() || v.tape != this || v.id >= size())
    throw ContractError("Var does not belong to this tape");
  return v.id;
}

Var Tape::leaf(const Matrix& value) {
  require_finite("leaf", value);
  Node n;
  n.kind = "leaf";
  n.value = value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::constant(const Matrix& value) {
  require_finite("constant", value);
  Node n;
  n.kind = "constant";
  n.value = value;
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::node(const std::string& kind, Matrix value,
               const std::vector<Var>& parents, BackwardFn back) {
  require_finite(kind, value);
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (Var p : parents) {
    n.parents.push_back(check(p));
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(check(v));
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
    shape_fail("accumulate(" + n.kind + ")", n.value, g);
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var root) {
  const int r = check(root);
  const Matrix& rv = nodes_[r].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw ContractError("backward: root must be 1x1, got " + shape_str(rv));
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[r].grad = Matrix::Ones(1, 1);
  for (int i = r; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

namespace {

// Broadcast layout of a binary op: equal shapes, row vector vs batch, or
// 1x1 scalar.
enum class Bcast { none, row_b, row_a, scalar_b, scalar_a };

Bcast bcast_of(const std::string& op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::none;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar_b;
  if (a.rows() == 1 && a.cols() == 1) return Bcast::scalar_a;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row_b;
  if (a.rows() == 1 && a.cols() == b.cols()) return Bcast::row_a;
  shape_fail(op, a, b);
}

// Reduce a full-size gradient back to the (possibly broadcast) operand shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  if (cols == 1) return g.rowwise().sum();
  throw ShapeError("reduce_to: cannot reduce " + shape_str(g));
}

Var unary(const std::string& kind, Var a, Matrix value,
          std::function<Matrix(const Matrix&)> vjp) {
  const int pid = a.id;
  return a.tape->node(kind, std::move(value), {a},
                      [pid, vjp](Tape& t, const Matrix& g) {
                        t.accumulate(pid, vjp(g));
                      });
}

}  // namespace

Var constant_like(Var v, const Matrix& m) { return v.tape->constant(m); }

Var matmul(Var a, Var b) {
  if (!same_tape(a, b)) throw ContractError("matmul: operands on different tapes");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Matrix out = av * bv;
  const int ai = a.id, bi = b.id;
  Matrix as = av, bs = bv;  // saved forward values
  return t.node("matmul", std::move(out), {a, b},
                [ai, bi, as, bs](Tape& tp, const Matrix& g) {
                  tp.accumulate(ai, g * bs.transpose());
                  tp.accumulate(bi, as.transpose() * g);
                });
}

Var add(Var a, Var b) {
  if (!same_tape(a, b)) throw ContractError("add: operands on different tapes");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const Bcast bc = bcast_of("add", av, bv);
  Matrix out;
  switch (bc) {
    case Bcast::none: out = av + bv; break;
    case Bcast::row_b: out = av.rowwise() + bv.row(0); break;
    case Bcast::row_a: out = bv.rowwise() + av.row(0); break;
    case Bcast::scalar_b: out = av.array() + bv(0, 0); break;
    case Bcast::scalar_a: out = bv.array() + av(0, 0); break;
  }
  const int ai = a.id, bi = b.id;
  const Eigen::Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc2 = bv.cols();
  return t.node("add", std::move(out), {a, b},
                [ai, bi, ar, ac, br, bc2](Tape& tp, const Matrix& g) {
                  tp.accumulate(ai, reduce_to(g, ar, ac));
                  tp.accumulate(bi, reduce_to(g, br, bc2));
                });
}

Var sub(Var a, Var b) {
  if (!same_tape(a, b)) throw ContractError("sub: operands on different tapes");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const Bcast bc = bcast_of("sub", av, bv);
  Matrix out;
  switch (bc) {
    case Bcast::none: out = av - bv; break;
    case Bcast::row_b: out = av.rowwise() - bv.row(0); break;
    case Bcast::row_a: out = (-bv).rowwise() + av.row(0); break;
    case Bcast::scalar_b: out = av.array() - bv(0, 0); break;
    case Bcast::scalar_a: out = av(0, 0) - bv.array(); break;
  }
  const int ai = a.id, bi = b.id;
  const Eigen::Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc2 = bv.cols();
  return t.node("sub", std::move(out), {a, b},
                [ai, bi, ar, ac, br, bc2](Tape& tp, const Matrix& g) {
                  tp.accumulate(ai, reduce_to(g, ar, ac));
                  tp.accumulate(bi, -reduce_to(g, br, bc2));
                });
}

Var mul(Var a, Var b) {
  if (!same_tape(a, b)) throw ContractError("mul: operands on different tapes");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const Bcast bc = bcast_of("mul", av, bv);
  Matrix out;
  switch (bc) {
    case Bcast::none: out = av.cwiseProduct(bv); break;
    case Bcast::row_b: out = av.array().rowwise() * bv.row(0).array(); break;
    case Bcast::row_a: out = bv.array().rowwise() * av.row(0).array(); break;
    case Bcast::scalar_b: out = av * bv(0, 0); break;
    case Bcast::scalar_a: out = bv * av(0, 0); break;
  }
  const int ai = a.id, bi = b.id;
  Matrix as = av, bs = bv;
  return t.node(
      "mul", std::move(out), {a, b}, [ai, bi, as, bs](Tape& tp, const Matrix& g) {
        Matrix ga, gb;
        if (bs.rows() == 1 && bs.cols() == 1) {
          ga = g * bs(0, 0);
          gb = Matrix::Constant(1, 1, (g.cwiseProduct(as)).sum());
        } else if (as.rows() == 1 && as.cols() == 1) {
          gb = g * as(0, 0);
          ga = Matrix::Constant(1, 1, (g.cwiseProduct(bs)).sum());
        } else if (bs.rows() == 1 && as.rows() > 1) {
          ga = g.array().rowwise() * bs.row(0).array();
          gb = (g.cwiseProduct(as)).colwise().sum();
        } else if (as.rows() == 1 && bs.rows() > 1) {
          gb = g.array().rowwise() * as.row(0).array();
          ga = (g.cwiseProduct(bs)).colwise().sum();
        } else {
          ga = g.cwiseProduct(bs);
          gb = g.cwiseProduct(as);
        }
        tp.accumulate(ai, ga);
        tp.accumulate(bi, gb);
      });
}

Var scale(Var a, double s) {
  const Matrix& av = a.tape->value(a);
  return unary("scale", a, av * s, [s](const Matrix& g) -> Matrix { return g * s; });
}

Var relu(Var a) {
  const Matrix& av = a.tape->value(a);
  Matrix mask = (av.array() > 0.0).cast<double>();  // subgradient 0 at 0
  return unary("relu", a, av.cwiseMax(0.0),
               [mask](const Matrix& g) -> Matrix { return g.cwiseProduct(mask); });
}

Var sigmoid(Var a) {
  const Matrix& av = a.tape->value(a);
  Matrix s = (1.0 / (1.0 + (-av.array()).exp())).matrix();
  return unary("sigmoid", a, s, [s](const Matrix& g) -> Matrix {
    return g.array() * s.array() * (1.0 - s.array());
  });
}

Var sin(Var a) {
  const Matrix& av = a.tape->value(a);
  Matrix c = av.array().cos().matrix();
  return unary("sin", a, av.array().sin().matrix(),
               [c](const Matrix& g) -> Matrix { return g.cwiseProduct(c); });
}

Var square(Var a) {
  const Matrix& av = a.tape->value(a);
  Matrix as = av;
  return unary("square", a, av.cwiseProduct(av),
               [as](const Matrix& g) -> Matrix { return 2.0 * g.cwiseProduct(as); });
}

Var sum(Var a) {
  const Matrix& av = a.tape->value(a);
  const Eigen::Index r = av.rows(), c = av.cols();
  return unary("sum", a, Matrix::Constant(1, 1, av.sum()),
               [r, c](const Matrix& g) -> Matrix {
                 return Matrix::Constant(r, c, g(0, 0));
               });
}

Var mean(Var a) {
  const Matrix& av = a.tape->value(a);
  const Eigen::Index r = av.rows(), c = av.cols();
  const double inv = 1.0 / static_cast<double>(r * c);
  return unary("mean", a, Matrix::Constant(1, 1, av.sum() * inv),
               [r, c, inv](const Matrix& g) -> Matrix {
                 return Matrix::Constant(r, c, g(0, 0) * inv);
               });
}

Var row_sum(Var a) {
  const Matrix& av = a.tape->value(a);
  const Eigen::Index c = av.cols();
  return unary("row_sum", a, av.rowwise().sum(),
               [c](const Matrix& g) -> Matrix { return g * RowVec::Ones(c); });
}

Var concat_cols(Var a, Var b) {
  if (!same_tape(a, b))
    throw ContractError("concat: operands on different tapes");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) shape_fail("concat", av, bv);
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const int ai = a.id, bi = b.id;
  const Eigen::Index ac = av.cols(), bc = bv.cols();
  return t.node("concat", std::move(out), {a, b},
                [ai, bi, ac, bc](Tape& tp, const Matrix& g) {
                  tp.accumulate(ai, g.leftCols(ac));
                  tp.accumulate(bi, g.rightCols(bc));
                });
}

Var slice_cols(Var a, int start, int count) {
  const Matrix& av = a.tape->value(a);
  if (start < 0 || count < 0 || start + count > av.cols())
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     std::to_string(av.cols()) + " columns");
  const Eigen::Index r = av.rows(), c = av.cols();
  return unary("slice", a, av.middleCols(start, count),
               [r, c, start, count](const Matrix& g) -> Matrix {
                 Matrix full = Matrix::Zero(r, c);
                 full.middleCols(start, count) = g;
                 return full;
               });
}

Var dropout(Var a, double rate, Rng* rng, bool train) {
  const Matrix& av = a.tape->value(a);
  if (!train || rate <= 0.0) {
    return unary("dropout", a, av, [](const Matrix& g) -> Matrix { return g; });
  }
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  if (rng == nullptr) throw ContractError("dropout: train mode requires an rng");
  const double keep = 1.0 - rate;
  Matrix mask(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (Eigen::Index j = 0; j < av.cols(); ++j)
      mask(i, j) = rng->uniform01() < rate ? 0.0 : 1.0 / keep;
  return unary("dropout", a, av.cwiseProduct(mask),
               [mask](const Matrix& g) -> Matrix { return g.cwiseProduct(mask); });
}

Var batch_norm(Var x, Var gamma, Var beta, Matrix& running_mean,
               Matrix& running_var, bool train, double momentum, double eps) {
  if (!same_tape(x, gamma) || !same_tape(x, beta))
    throw ContractError("batch_norm: operands on different tapes");
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  const Eigen::Index B = xv.rows(), C = xv.cols();
  if (gv.rows() != 1 || gv.cols() != C || bv.rows() != 1 || bv.cols() != C)
    throw ShapeError("batch_norm: scale/shift must be 1x" + std::to_string(C));
  if (running_mean.cols() != C || running_var.cols() != C)
    throw ShapeError("batch_norm: running stats must be 1x" + std::to_string(C));

  const int xi = x.id, gi = gamma.id, bi = beta.id;
  if (!train) {
    RowVec inv_std =
        (running_var.row(0).array() + eps).sqrt().inverse().matrix();
    Matrix xhat =
        (xv.rowwise() - running_mean.row(0)).array().rowwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * gv.row(0).array()).matrix().rowwise() +
                 bv.row(0);
    RowVec grow = gv.row(0);
    return t.node("batch_norm", std::move(out), {x, gamma, beta},
                  [xi, gi, bi, xhat, inv_std, grow](Tape& tp, const Matrix& g) {
                    tp.accumulate(bi, g.colwise().sum());
                    tp.accumulate(gi, (g.cwiseProduct(xhat)).colwise().sum());
                    tp.accumulate(
                        xi, (g.array().rowwise() *
                             (grow.array() * inv_std.array()))
                                .matrix());
                  });
  }

  if (B < 2)
    throw ContractError("batch_norm: train mode requires batch >= 2");
  RowVec mu = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mu;
  RowVec var = centered.array().square().colwise().mean();
  RowVec inv_std = (var.array() + eps).sqrt().inverse().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out =
      (xhat.array().rowwise() * gv.row(0).array()).matrix().rowwise() + bv.row(0);

  running_mean.row(0) = (1.0 - momentum) * running_mean.row(0) + momentum * mu;
  running_var.row(0) = (1.0 - momentum) * running_var.row(0) + momentum * var;

  RowVec grow = gv.row(0);
  const double invB = 1.0 / static_cast<double>(B);
  return t.node(
      "batch_norm", std::move(out), {x, gamma, beta},
      [xi, gi, bi, xhat, inv_std, grow, invB](Tape& tp, const Matrix& g) {
        tp.accumulate(bi, g.colwise().sum());
        tp.accumulate(gi, (g.cwiseProduct(xhat)).colwise().sum());
        // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat)
        //                                    - xhat * mean(dxhat .* xhat))
        Matrix dxhat = g.array().rowwise() * grow.array();
        RowVec m1 = dxhat.colwise().sum() * invB;
        RowVec m2 = (dxhat.cwiseProduct(xhat)).colwise().sum() * invB;
        Matrix dx = dxhat.rowwise() - m1;
        dx -= (xhat.array().rowwise() * m2.array()).matrix();
        dx = dx.array().rowwise() * inv_std.array();
        tp.accumulate(xi, dx);
      });
}

}  // namespace dc3
