#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dc3/tape.hpp"

namespace dc3 {

// Numeric completion output plus whatever the family needs to backpropagate
// or correct at the completed point.
struct CompletionResult {
  Matrix Y;                      // batch x n, equality-feasible rows
  std::shared_ptr<void> cache;   // family-specific (factorizations, traces)
  std::vector<std::uint8_t> ok;  // per-row success flag
  int max_iters = 0;             // worst Newton iteration count (0 if direct)
};

// Completion recorded on a tape.
struct Completed {
  Var Y;
  std::shared_ptr<void> cache;
  std::vector<std::uint8_t> ok;
};

struct CorrectionOpts {
  int t_max = 10;
  double gamma = 1e-7;
  double momentum = 0.5;
  double tol = 1e-4;
};

// Uniform interface over optimization task families: objective, residuals,
// equality completion with implicit backward, and the inequality correction
// map. Batches are row-major: one instance per row. Immutable after
// construction and safe to share across workers.
class ProblemFamily {
 public:
  virtual ~ProblemFamily() = default;

  virtual int n() const = 0;          // decision dimension
  virtual int input_dim() const = 0;  // problem-data dimension d
  virtual int n_eq() const = 0;
  virtual int n_ineq() const = 0;
  int partial_dim() const { return n() - n_eq(); }

  // Network head widths; raw outputs pass through decode_* below.
  virtual int raw_partial_dim() const { return partial_dim(); }
  virtual int raw_full_dim() const { return n(); }

  // ---- numeric batch API ----
  virtual Vector objective(const Matrix& X, const Matrix& Y) const = 0;
  virtual Matrix eq_resid(const Matrix& X, const Matrix& Y) const = 0;
  virtual Matrix ineq_resid(const Matrix& X, const Matrix& Y) const = 0;

  virtual Matrix decode_partial(const Matrix& raw) const { return raw; }
  virtual Matrix decode_full(const Matrix& raw) const { return raw; }
  virtual Matrix partial_of(const Matrix& Y) const = 0;

  virtual CompletionResult complete(const Matrix& X, const Matrix& Z) const = 0;
  // Completion warm-started from a previous result at a nearby Z. Families
  // with iterative completions override this; the default ignores the hint.
  virtual CompletionResult complete_from(const Matrix& X, const Matrix& Z,
                                         const CompletionResult&) const {
    return complete(X, Z);
  }
  // dL/dz from dL/dy at the completed point, via the equality-constraint
  // Jacobian (no explicit dphi/dz matrix).
  virtual Matrix complete_backward(const CompletionResult& cr, const Matrix& X,
                                   const Matrix& dY) const = 0;

  // Gradient correction along the equality manifold, in place.
  virtual void correct_partial(const Matrix& X, CompletionResult& cr,
                               const CorrectionOpts& opts) const = 0;
  // Full-space correction descending on both violations (completion ablated).
  virtual Matrix correct_full(const Matrix& X, Matrix Y,
                              const CorrectionOpts& opts) const = 0;

  // Derivatives used by the reference solvers. *_grad_accum returns
  // sum_i W(r, i) * d resid_i / dy for each row r.
  virtual Matrix objective_grad(const Matrix& X, const Matrix& Y) const = 0;
  virtual Matrix ineq_grad_accum(const Matrix& X, const Matrix& Y,
                                 const Matrix& W) const = 0;
  virtual Matrix eq_grad_accum(const Matrix& X, const Matrix& Y,
                               const Matrix& W) const = 0;

  // Feasible-ish starting partial variables for solvers.
  virtual Matrix initial_partial(const Matrix& X) const = 0;

  // ---- recorded (tape) API ----
  virtual Var decode_partial_t(Var raw) const { return raw; }
  virtual Var decode_full_t(Var raw) const { return raw; }
  virtual Completed complete_t(Var Z, const Matrix& X) const = 0;
  virtual Var objective_t(Var Y, const Matrix& X) const = 0;  // batch x 1
  virtual Var eq_resid_t(Var Y, const Matrix& X) const = 0;
  virtual Var ineq_resid_t(Var Y, const Matrix& X) const = 0;
  virtual Var correct_partial_unroll_t(Completed& c, const Matrix& X,
                                       const CorrectionOpts& opts) const = 0;
  virtual Var correct_full_unroll_t(Var Y, const Matrix& X,
                                    const CorrectionOpts& opts) const = 0;
};

// Problem instances with train/val/test split tags (assigned 10:1:1 in index
// order: train block, then validation, then test).
struct InstanceSet {
  Matrix X;         // count x d
  Matrix Y_labels;  // count x partial_dim when has_labels
  bool has_labels = false;
  int n_train = 0, n_val = 0, n_test = 0;

  Matrix train_X() const { return X.topRows(n_train); }
  Matrix val_X() const { return X.middleRows(n_train, n_val); }
  Matrix test_X() const { return X.bottomRows(n_test); }
  Matrix train_labels() const { return Y_labels.topRows(n_train); }
  Matrix test_labels() const { return Y_labels.bottomRows(n_test); }
};

// 10:1:1 split sizes; test and validation each get floor(count/12).
inline void assign_split(InstanceSet& set, int count) {
  set.n_test = count / 12;
  set.n_val = count / 12;
  set.n_train = count - set.n_val - set.n_test;
}

}  // namespace dc3
