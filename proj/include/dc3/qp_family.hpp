#pragma once

#include <Eigen/Dense>

#include "dc3/family.hpp"

namespace dc3 {

// Linearly constrained family
//   minimize  1/2 y'Qy + p'y          (quadratic kind)
//         or  1/2 y'Qy + p'sin(y)     (sine kind, non-convex)
//   s.t.      Ay = x,   Gy <= h_rhs,
// with Q diagonal PSD and h_rhs = sum_j |(G A+)_{ij}| so that y = A+ x is
// feasible whenever |x_j| <= 1. Only x varies across instances.
class QpFamily : public ProblemFamily {
 public:
  enum class Kind { quadratic, sine };

  Kind kind = Kind::quadratic;
  RowVec q_diag;  // 1 x n, entries in [0, 1]
  RowVec p;       // 1 x n
  Matrix A;       // n_eq x n
  Matrix G;       // n_ineq x n
  RowVec h_rhs;   // 1 x n_ineq
  Matrix A_pinv;  // n x n_eq

  // Variable split: y restricted to partial columns is the network output z,
  // the dependent block is solved from the equalities. Index vectors keep the
  // original column order within each group.
  std::vector<int> partial_idx;  // size m
  std::vector<int> dep_idx;      // size n_eq

  // ProblemFamily interface -------------------------------------------------
  int n() const override { return static_cast<int>(A.cols()); }
  int input_dim() const override { return static_cast<int>(A.rows()); }
  int n_eq() const override { return static_cast<int>(A.rows()); }
  int n_ineq() const override { return static_cast<int>(G.rows()); }

  Vector objective(const Matrix& X, const Matrix& Y) const override;
  Matrix eq_resid(const Matrix& X, const Matrix& Y) const override;
  Matrix ineq_resid(const Matrix& X, const Matrix& Y) const override;
  Matrix partial_of(const Matrix& Y) const override;

  CompletionResult complete(const Matrix& X, const Matrix& Z) const override;
  Matrix complete_backward(const CompletionResult& cr, const Matrix& X,
                           const Matrix& dY) const override;
  void correct_partial(const Matrix& X, CompletionResult& cr,
                       const CorrectionOpts& opts) const override;
  Matrix correct_full(const Matrix& X, Matrix Y,
                      const CorrectionOpts& opts) const override;

  Matrix objective_grad(const Matrix& X, const Matrix& Y) const override;
  Matrix ineq_grad_accum(const Matrix& X, const Matrix& Y,
                         const Matrix& W) const override;
  Matrix eq_grad_accum(const Matrix& X, const Matrix& Y,
                       const Matrix& W) const override;
  Matrix initial_partial(const Matrix& X) const override;

  Completed complete_t(Var Z, const Matrix& X) const override;
  Var objective_t(Var Y, const Matrix& X) const override;
  Var eq_resid_t(Var Y, const Matrix& X) const override;
  Var ineq_resid_t(Var Y, const Matrix& X) const override;
  Var correct_partial_unroll_t(Completed& c, const Matrix& X,
                               const CorrectionOpts& opts) const override;
  Var correct_full_unroll_t(Var Y, const Matrix& X,
                            const CorrectionOpts& opts) const override;

  // dL/dz from its two pieces (the Eq. (3)/(4) product, dependent-block
  // solve followed by a thin matmul).
  Matrix backward_zphi(const Matrix& dZ_direct, const Matrix& dPhi) const;

  // Called once after the matrices and split are set.
  void finalize();

  // Derived quantities (valid after finalize()).
  const Matrix& assemble_z() const { return Pz_; }      // n x m, 0/1
  const Matrix& assemble_phi() const { return Pphi_; }  // n x n_eq, 0/1
  const Matrix& dphi_dz() const { return dphi_dz_; }    // n_eq x m
  const Matrix& geff() const { return G_eff_; }         // n_ineq x m
  double dep_condition() const { return dep_cond_; }

 private:
  Matrix Pz_, Pphi_;           // scatter matrices for the split
  Matrix A_part_, A_dep_;      // equality Jacobian blocks
  Matrix G_part_, G_dep_;
  Eigen::PartialPivLU<Matrix> lu_dep_;
  Eigen::PartialPivLU<Matrix> lu_dep_T_;  // factorization of A_dep transposed
  Matrix dphi_dz_;             // -A_dep^{-1} A_part
  Matrix G_eff_;               // G_part + G_dep dphi_dz
  Matrix Ez_;                  // Pz + Pphi dphi_dz: dY/dz for manifold moves
  double dep_cond_ = 0.0;
};

// Random family, deterministic in seed. A, G entries i.i.d. standard normal;
// Q diagonal and p i.i.d. uniform [0, 1]. The dependent block is the last
// n_eq columns of A when well conditioned, otherwise a column-pivoted
// orthogonal factorization picks the basis.
QpFamily generate_qp_family(std::uint64_t seed, int n, int n_eq, int n_ineq,
                            QpFamily::Kind kind);

// x rows i.i.d. uniform [-1, 1]^{n_eq}, split 10:1:1.
InstanceSet sample_instances(const QpFamily& family, int count,
                             std::uint64_t seed);

// Bit-exact round trip of family matrices and metadata.
void save_family(const std::string& path, const QpFamily& family);
QpFamily load_family(const std::string& path);

void save_instances(const std::string& path, const InstanceSet& set);
InstanceSet load_instances(const std::string& path);

}  // namespace dc3
