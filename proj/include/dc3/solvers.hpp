#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dc3/family.hpp"
#include "dc3/qp_family.hpp"

namespace dc3 {

// Operator-splitting solver for the convex quadratic family:
//   minimize 1/2 y'Qy + p'y  s.t.  l <= M y <= u,
// with M = [A; G], equality rows pinned by l = u. The KKT system is
// factorized once per family and reused across instances.
struct AdmmSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;       // over-relaxation
  double eq_rho_scale = 1e3;  // stiffer penalty on equality rows
  int max_iters = 20000;
  double tol = 1e-6;
};

struct AdmmResult {
  Vector y;
  int iters = 0;
  bool converged = false;
};

class QpAdmmSolver {
 public:
  QpAdmmSolver(const QpFamily& family, AdmmSettings settings = {});

  AdmmResult solve_one(const RowVec& x) const;

  // One solve per row of X. Throws SolverError if any instance fails to
  // converge. obj_out, when non-null, receives the objective per row.
  Matrix solve_batch(const Matrix& X, Vector* obj_out = nullptr) const;

 private:
  const QpFamily& family_;
  AdmmSettings s_;
  Matrix M_;           // (n_eq + n_ineq) x n
  Vector rho_;         // per-row penalty
  Eigen::PartialPivLU<Matrix> kkt_;
};

// Interior-point solve in the reduced space of partial variables: equalities
// are eliminated by the family's completion map, inequalities enter through a
// log barrier. Descent uses a spectral-step gradient method with backtracking.
// Handles non-convex objectives via multi-start.
struct BarrierSettings {
  double mu0 = 1.0;
  double mu_factor = 0.2;
  int rounds = 12;
  int max_inner = 400;
  double stat_tol = 1e-6;   // gradient infinity-norm target per round
  // Rounds at tiny mu can stall on floating-point noise near active
  // constraints. The solve still counts as converged if the last round that
  // met its tolerance had mu at or below this.
  double accept_mu = 2e-5;
  // Stop continuation once a converged round reaches this mu; later rounds
  // only polish digits below the duality-gap scale and converge slowly.
  double mu_stop = 1e-6;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int starts = 1;           // >1 enables random restarts (non-convex)
  std::uint64_t seed = 1;
};

struct BarrierResult {
  Matrix Y;                       // rows x n
  Vector obj;                     // objective per row
  std::vector<std::uint8_t> ok;   // per-row success
};

BarrierResult solve_reduced_barrier(const ProblemFamily& family,
                                    const Matrix& X,
                                    const BarrierSettings& settings = {});

// Barrier labels for supervised baselines: fills set.Y_labels with the
// solver's partial variables and returns the objectives. Throws SolverError
// if any instance fails.
Vector make_labels(const ProblemFamily& family, InstanceSet& set,
                   const BarrierSettings& settings = {});

}  // namespace dc3
