#pragma once

#include <complex>
#include <vector>

#include "dc3/acopf/case.hpp"
#include "dc3/family.hpp"

namespace dc3::acopf {

using dc3::CompletionResult;
using dc3::Completed;
using dc3::CorrectionOpts;
using dc3::InstanceSet;
using dc3::RowVec;
using dc3::Var;
using dc3::Vector;

// AC optimal power flow over a fixed network. One generator per generator
// bus, a single reference bus (angle pinned to zero), quadratic generation
// cost, box limits on generation and voltage magnitude.
//
// Decision vector y (per unit, angles in radians), n = 2*ng + 2*nb - 1:
//   [ pg (ng) | qg (ng) | vm (nb) | va (nb - 1, reference excluded) ]
// Instance data x, d = 2*nb: [ pd (nb) | qd (nb) ].
// Equalities, 2*nb: real then reactive power balance at every bus.
// Inequalities, 2*(2*ng + nb): upper/lower box limits.
//
// The partial variables z (2*ng - 1) are pg at non-reference generators and
// vm at generator buses. Completion solves the remaining voltages by Newton
// iteration on the balance equations at non-slack buses, then reads the
// slack injection and reactive generation off the resulting flows.
struct AcopfOptions {
  double newton_tol = 1e-8;
  int newton_max_iters = 50;
};

class AcopfFamily : public dc3::ProblemFamily {
 public:
  using Options = AcopfOptions;

  explicit AcopfFamily(const CaseData& c, Options opt = Options());

  int n() const override { return 2 * ng_ + 2 * nb_ - 1; }
  int input_dim() const override { return 2 * nb_; }
  int n_eq() const override { return 2 * nb_; }
  int n_ineq() const override { return 2 * (2 * ng_ + nb_); }

  Vector objective(const dc3::Matrix& X, const dc3::Matrix& Y) const override;
  dc3::Matrix eq_resid(const dc3::Matrix& X, const dc3::Matrix& Y) const override;
  dc3::Matrix ineq_resid(const dc3::Matrix& X, const dc3::Matrix& Y) const override;

  dc3::Matrix decode_partial(const dc3::Matrix& raw) const override;
  dc3::Matrix decode_full(const dc3::Matrix& raw) const override;
  dc3::Matrix partial_of(const dc3::Matrix& Y) const override;

  CompletionResult complete(const dc3::Matrix& X, const dc3::Matrix& Z) const override;
  CompletionResult complete_from(const dc3::Matrix& X, const dc3::Matrix& Z,
                                 const CompletionResult& prev) const override;
  dc3::Matrix complete_backward(const CompletionResult& cr, const dc3::Matrix& X,
                                const dc3::Matrix& dY) const override;

  void correct_partial(const dc3::Matrix& X, CompletionResult& cr,
                       const CorrectionOpts& opts) const override;
  dc3::Matrix correct_full(const dc3::Matrix& X, dc3::Matrix Y,
                           const CorrectionOpts& opts) const override;

  dc3::Matrix objective_grad(const dc3::Matrix& X, const dc3::Matrix& Y) const override;
  dc3::Matrix ineq_grad_accum(const dc3::Matrix& X, const dc3::Matrix& Y,
                              const dc3::Matrix& W) const override;
  dc3::Matrix eq_grad_accum(const dc3::Matrix& X, const dc3::Matrix& Y,
                            const dc3::Matrix& W) const override;
  dc3::Matrix initial_partial(const dc3::Matrix& X) const override;

  Var decode_partial_t(Var raw) const override;
  Var decode_full_t(Var raw) const override;
  Completed complete_t(Var Z, const dc3::Matrix& X) const override;
  Var objective_t(Var Y, const dc3::Matrix& X) const override;
  Var eq_resid_t(Var Y, const dc3::Matrix& X) const override;
  Var ineq_resid_t(Var Y, const dc3::Matrix& X) const override;
  Var correct_partial_unroll_t(Completed& c, const dc3::Matrix& X,
                               const CorrectionOpts& opts) const override;
  Var correct_full_unroll_t(Var Y, const dc3::Matrix& X,
                            const CorrectionOpts& opts) const override;

  // Nominal instance vector [pd, qd] in per unit, for sampling.
  const RowVec& nominal_x() const { return x0_; }
  int n_bus() const { return nb_; }
  int n_gen() const { return ng_; }
  const Eigen::MatrixXcd& admittance() const { return Ybus_; }

 private:
  struct Trace;  // converged voltage profile per batch row

  // Column offsets into y.
  int pg_col(int g) const { return g; }
  int qg_col(int g) const { return ng_ + g; }
  int vm_col(int b) const { return 2 * ng_ + b; }
  int va_col(int b) const;  // b must not be the reference bus

  CompletionResult complete_impl(const dc3::Matrix& X, const dc3::Matrix& Z,
                                 const Trace* warm) const;

  Options opt_;
  int nb_ = 0, ng_ = 0;
  Eigen::MatrixXcd Ybus_;
  int ref_ = -1;       // reference bus position
  int ref_gen_ = -1;   // generator at the reference bus
  std::vector<int> gen_bus_;      // bus of each generator, ascending
  std::vector<int> nonref_gen_;   // generator positions, reference excluded
  std::vector<int> load_bus_;     // buses without generators
  std::vector<int> nonref_bus_;   // all buses except the reference
  std::vector<int> va_pos_;       // bus -> index within nonref_bus_, -1 at ref
  std::vector<int> bus_gen_;      // bus -> generator position, -1 if none

  RowVec pmin_, pmax_, qmin_, qmax_;  // 1 x ng, per unit
  RowVec vmin_, vmax_;                // 1 x nb
  RowVec c2_, c1_, c0_;               // cost on per-unit pg, uniformly rescaled
  RowVec x0_;                         // nominal [pd, qd]
  RowVec z_lo_, z_hi_;                // decode boxes for the partial head
};

// Loads drawn independently and uniformly within +/- spread of nominal
// (zero loads stay zero). Split 10:1:1.
InstanceSet sample_acopf_instances(const AcopfFamily& family, int count,
                                   std::uint64_t seed, double spread = 0.1);

}  // namespace dc3::acopf
