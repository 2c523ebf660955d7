#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dc3/error.hpp"
#include "dc3/rng.hpp"

namespace dc3 {

using Matrix = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

class Tape;

// Lightweight handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Recorded computation graph for reverse-mode differentiation. Values are
// dense 2-D arrays (a batch is rows x features). Nodes are appended in
// topological order; backward() visits them exactly once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  // Gradient-tracked input (network parameters, probe points).
  Var leaf(const Matrix& value);

  // Untracked value (problem data, fixed matrices).
  Var constant(const Matrix& value);

  // Generic recorded node. `parents` must already live on this tape; the
  // backward fn accumulates into them via accumulate().
  Var node(const std::string& kind, Matrix value, const std::vector<Var>& parents,
           BackwardFn back);

  const Matrix& value(Var v) const { return nodes_.at(check(v)).value; }

  // Gradient of the most recent backward() root w.r.t. node v. Zero matrix
  // if no gradient reached it.
  Matrix grad(Var v) const;

  bool tracked(Var v) const { return nodes_.at(check(v)).requires_grad; }

  // Reverse sweep from a scalar (1x1) root. Grad buffers are reset first,
  // so the sweep is re-runnable on the same tape.
  void backward(Var root);

  // Called from backward fns: add g to the gradient buffer of node `id`.
  void accumulate(int id, const Matrix& g);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    std::string kind;
    Matrix value;
    Matrix grad;  // empty until touched by a sweep
    std::vector<int> parents;
    BackwardFn back;
    bool requires_grad = false;
  };

  int check(Var v) const;
  std::vector<Node> nodes_;
};

// Throws NumericError if m has a NaN/Inf entry.
void require_finite(const std::string& op, const Matrix& m);

// ---- op catalog (forward + backward rules) --------------------------------
// Binary ops accept equal shapes, or a 1 x cols second operand broadcast
// across rows, or a 1x1 scalar operand.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var sin(Var a);
Var square(Var a);
Var sum(Var a);   // -> 1x1
Var mean(Var a);  // -> 1x1
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, int start, int count);

// Per-row sum, as a batch x 1 column.
Var row_sum(Var a);

// Inverted dropout: train mode zeroes entries with probability `rate` and
// scales survivors by 1/(1-rate); eval mode is the identity.
Var dropout(Var a, double rate, Rng* rng, bool train);

// Batch normalization over the batch (row) dimension. gamma/beta are 1 x cols
// tracked leaves; running stats are updated in place in train mode and used
// verbatim in eval mode. Train mode requires >= 2 rows.
Var batch_norm(Var x, Var gamma, Var beta, Matrix& running_mean,
               Matrix& running_var, bool train, double momentum = 0.1,
               double eps = 1e-5);

// Convenience constant on the same tape as v.
Var constant_like(Var v, const Matrix& m);

}  // namespace dc3
