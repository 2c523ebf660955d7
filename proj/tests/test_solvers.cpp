#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dc3/solvers.hpp"

using namespace dc3;

namespace {

// Tiny family with a hand-checkable optimum:
//   minimize 1/2 (y1^2 + y2^2 + y3^2)  s.t.  y1 + y2 + y3 = x,  -y <= 1.
// Optimum is the even split y = x/3 whenever |x| <= 3.
QpFamily tiny_family() {
  QpFamily fam;
  fam.kind = QpFamily::Kind::quadratic;
  fam.q_diag = RowVec::Ones(3);
  fam.p = RowVec::Zero(3);
  fam.A = Matrix::Ones(1, 3);
  fam.G = -Matrix::Identity(3, 3);
  fam.h_rhs = RowVec::Ones(3);
  fam.A_pinv = Matrix::Constant(3, 1, 1.0 / 3.0);
  fam.partial_idx = {0, 1};
  fam.dep_idx = {2};
  fam.finalize();
  return fam;
}

}  // namespace

TEST_CASE("operator-splitting solver recovers the even split") {
  QpFamily fam = tiny_family();
  QpAdmmSolver solver(fam);
  RowVec x(1);
  x << 1.5;
  AdmmResult r = solver.solve_one(x);
  REQUIRE(r.converged);
  CHECK((r.y - Vector::Constant(3, 0.5)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("solutions satisfy first-order optimality on a random family") {
  QpFamily fam = generate_qp_family(101, 30, 12, 20, QpFamily::Kind::quadratic);
  Rng rng(102);
  Matrix X = rng.uniform_matrix(8, 12, -1.0, 1.0);
  QpAdmmSolver solver(fam);
  Vector obj;
  Matrix Y = solver.solve_batch(X, &obj);

  CHECK(fam.eq_resid(X, Y).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(fam.ineq_resid(X, Y).maxCoeff() < 1e-4);
  CHECK((obj - fam.objective(X, Y)).cwiseAbs().maxCoeff() < 1e-9);

  // Stationarity: the objective gradient must be (approximately) a
  // combination of equality rows and active inequality rows.
  for (int r = 0; r < Y.rows(); ++r) {
    Matrix y = Y.row(r);
    Matrix g = fam.objective_grad(X.row(r), y);  // 1 x n
    RowVec ineq = fam.ineq_resid(X.row(r), y).row(0);
    std::vector<int> active;
    for (int j = 0; j < ineq.size(); ++j)
      if (ineq(j) > -1e-4) active.push_back(j);
    Matrix basis(fam.n_eq() + static_cast<int>(active.size()), fam.n());
    basis.topRows(fam.n_eq()) = fam.A;
    for (std::size_t k = 0; k < active.size(); ++k)
      basis.row(fam.n_eq() + static_cast<Eigen::Index>(k)) = fam.G.row(active[k]);
    // Least-squares residual of g against the row space of `basis`.
    Eigen::VectorXd lam =
        basis.transpose().colPivHouseholderQr().solve(g.transpose());
    const double resid = (basis.transpose() * lam - g.transpose()).norm();
    CHECK(resid < 1e-3 * std::max(1.0, g.norm()));
  }
}

TEST_CASE("reduced-space barrier matches the splitting solver on convex tasks") {
  QpFamily fam = generate_qp_family(111, 24, 10, 16, QpFamily::Kind::quadratic);
  Rng rng(112);
  Matrix X = rng.uniform_matrix(6, 10, -1.0, 1.0);

  QpAdmmSolver admm(fam);
  Vector obj_admm;
  Matrix Y_admm = admm.solve_batch(X, &obj_admm);

  BarrierResult br = solve_reduced_barrier(fam, X);
  for (int r = 0; r < 6; ++r) {
    REQUIRE(br.ok[static_cast<std::size_t>(r)] == 1);
    const double rel = std::abs(br.obj(r) - obj_admm(r)) /
                       std::max(1e-12, std::abs(obj_admm(r)));
    CHECK(rel < 1e-3);
  }
  CHECK(fam.eq_resid(X, br.Y).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fam.ineq_resid(X, br.Y).maxCoeff() <= 0.0);
}

TEST_CASE("barrier handles the non-convex objective with restarts") {
  QpFamily fam = generate_qp_family(121, 16, 6, 10, QpFamily::Kind::sine);
  Rng rng(122);
  Matrix X = rng.uniform_matrix(4, 6, -1.0, 1.0);

  BarrierSettings bs;
  bs.starts = 3;
  BarrierResult br = solve_reduced_barrier(fam, X, bs);
  for (std::size_t r = 0; r < br.ok.size(); ++r) REQUIRE(br.ok[r] == 1);
  CHECK(fam.eq_resid(X, br.Y).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fam.ineq_resid(X, br.Y).maxCoeff() <= 0.0);

  // Multi-start should never do worse than the deterministic single start.
  BarrierSettings one;
  BarrierResult b1 = solve_reduced_barrier(fam, X, one);
  for (int r = 0; r < 4; ++r)
    CHECK(br.obj(r) <= b1.obj(r) + 1e-6 * std::max(1.0, std::abs(b1.obj(r))));
}

TEST_CASE("label generation fills partial variables for the training split") {
  QpFamily fam = generate_qp_family(131, 20, 8, 12, QpFamily::Kind::quadratic);
  InstanceSet set = sample_instances(fam, 24, 7);
  Vector obj = make_labels(fam, set);
  CHECK(set.has_labels);
  CHECK(set.Y_labels.rows() == 24);
  CHECK(set.Y_labels.cols() == fam.partial_dim());
  CHECK(obj.size() == 24);

  // Labels complete back to feasible near-optimal points.
  CompletionResult cr = fam.complete(set.X, set.Y_labels);
  CHECK(fam.eq_resid(set.X, cr.Y).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fam.ineq_resid(set.X, cr.Y).maxCoeff() <= 1e-9);
  CHECK((fam.objective(set.X, cr.Y) - obj).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("deterministic across repeated runs") {
  QpFamily fam = generate_qp_family(141, 18, 7, 11, QpFamily::Kind::sine);
  Rng rng(142);
  Matrix X = rng.uniform_matrix(3, 7, -1.0, 1.0);
  BarrierSettings bs;
  bs.starts = 2;
  BarrierResult a = solve_reduced_barrier(fam, X, bs);
  BarrierResult b = solve_reduced_barrier(fam, X, bs);
  CHECK((a.Y - b.Y).cwiseAbs().maxCoeff() == 0.0);

  QpFamily qf = generate_qp_family(143, 18, 7, 11, QpFamily::Kind::quadratic);
  QpAdmmSolver s1(qf), s2(qf);
  Matrix Xa = rng.uniform_matrix(3, 7, -1.0, 1.0);
  CHECK((s1.solve_batch(Xa) - s2.solve_batch(Xa)).cwiseAbs().maxCoeff() == 0.0);
}
