#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "dc3/fd_check.hpp"
#include "dc3/qp_family.hpp"

using namespace dc3;

namespace {

Eigen::VectorXd to_vec(const Matrix& m) {
  Eigen::VectorXd v(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i)
    v(i) = m(i / m.cols(), i % m.cols());
  return v;
}

Matrix from_vec(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < v.size(); ++i) m(i / cols, i % cols) = v(i);
  return m;
}

}  // namespace

TEST_CASE("generation is deterministic and well formed") {
  QpFamily a = generate_qp_family(11, 20, 8, 12, QpFamily::Kind::quadratic);
  QpFamily b = generate_qp_family(11, 20, 8, 12, QpFamily::Kind::quadratic);
  CHECK((a.A - b.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.G - b.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.h_rhs - b.h_rhs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.q_diag.minCoeff() >= 0.0);
  CHECK(a.q_diag.maxCoeff() <= 1.0);
  CHECK(static_cast<int>(a.partial_idx.size()) == 12);
  CHECK(static_cast<int>(a.dep_idx.size()) == 8);

  QpFamily c = generate_qp_family(12, 20, 8, 12, QpFamily::Kind::quadratic);
  CHECK((a.A - c.A).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("pseudoinverse point is feasible for every admissible right side") {
  QpFamily fam = generate_qp_family(3, 30, 12, 20, QpFamily::Kind::quadratic);
  Rng rng(5);
  Matrix X = rng.uniform_matrix(40, 12, -1.0, 1.0);
  Matrix Y = X * fam.A_pinv.transpose();
  CHECK(fam.eq_resid(X, Y).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(fam.ineq_resid(X, Y).maxCoeff() <= 1e-12);
}

TEST_CASE("completion restores the equality constraints exactly") {
  QpFamily fam = generate_qp_family(7, 25, 10, 15, QpFamily::Kind::quadratic);
  Rng rng(8);
  Matrix X = rng.uniform_matrix(16, 10, -1.0, 1.0);
  Matrix Z = rng.normal_matrix(16, fam.partial_dim());
  CompletionResult cr = fam.complete(X, Z);
  REQUIRE(cr.Y.rows() == 16);
  CHECK(fam.eq_resid(X, cr.Y).cwiseAbs().maxCoeff() < 1e-9);
  // The partial block survives the scatter untouched.
  CHECK((fam.partial_of(cr.Y) - Z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("completion backward matches finite differences of the objective") {
  for (std::uint64_t seed : {1, 2, 3}) {
    QpFamily fam = generate_qp_family(seed, 16, 6, 10,
                                      seed == 3 ? QpFamily::Kind::sine
                                                : QpFamily::Kind::quadratic);
    Rng rng(seed + 100);
    const int m = fam.partial_dim();
    Matrix X = rng.uniform_matrix(1, 6, -1.0, 1.0);
    Matrix Z = rng.normal_matrix(1, m);

    auto f = [&](const Eigen::VectorXd& zv) {
      CompletionResult cr = fam.complete(X, from_vec(zv, 1, m));
      return fam.objective(X, cr.Y)(0);
    };

    CompletionResult cr = fam.complete(X, Z);
    Matrix dY = fam.objective_grad(X, cr.Y);
    Matrix dZ = fam.complete_backward(cr, X, dY);
    CHECK(finite_difference_check(f, to_vec(Z), to_vec(dZ)) < 1e-6);
  }
}

TEST_CASE("recorded completion propagates both direct and indirect paths") {
  QpFamily fam = generate_qp_family(21, 14, 5, 9, QpFamily::Kind::quadratic);
  Rng rng(22);
  const int m = fam.partial_dim();
  Matrix X = rng.uniform_matrix(3, 5, -1.0, 1.0);
  Matrix Z0 = rng.normal_matrix(3, m);

  auto f = [&](const Eigen::VectorXd& zv) {
    Matrix Z = from_vec(zv, 3, m);
    CompletionResult cr = fam.complete(X, Z);
    // Loss touching z both directly and through the completed point.
    return fam.objective(X, cr.Y).sum() + Z.squaredNorm();
  };

  Tape t;
  Var z = t.leaf(Z0);
  Completed c = fam.complete_t(z, X);
  Var loss = add(sum(fam.objective_t(c.Y, X)), sum(square(z)));
  t.backward(loss);
  CHECK(finite_difference_check(f, to_vec(Z0), to_vec(t.grad(z))) < 1e-6);
}

TEST_CASE("correction reduces inequality violation and keeps equalities") {
  QpFamily fam = generate_qp_family(31, 30, 12, 20, QpFamily::Kind::quadratic);
  Rng rng(32);
  Matrix X = rng.uniform_matrix(10, 12, -1.0, 1.0);
  Matrix Z = 3.0 * rng.normal_matrix(10, fam.partial_dim());
  CompletionResult cr = fam.complete(X, Z);
  const double before =
      fam.ineq_resid(X, cr.Y).cwiseMax(0.0).rowwise().squaredNorm().sum();
  REQUIRE(before > 0.0);

  CorrectionOpts opts;
  opts.t_max = 2000;
  opts.gamma = 1e-5;
  fam.correct_partial(X, cr, opts);
  const double after =
      fam.ineq_resid(X, cr.Y).cwiseMax(0.0).rowwise().squaredNorm().sum();
  CHECK(after < 0.5 * before);
  CHECK(fam.eq_resid(X, cr.Y).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("full-space correction descends both residuals") {
  QpFamily fam = generate_qp_family(33, 20, 8, 14, QpFamily::Kind::quadratic);
  Rng rng(34);
  Matrix X = rng.uniform_matrix(6, 8, -1.0, 1.0);
  Matrix Y0 = 2.0 * rng.normal_matrix(6, 20);
  auto score = [&](const Matrix& Y) {
    return fam.ineq_resid(X, Y).cwiseMax(0.0).squaredNorm() +
           fam.eq_resid(X, Y).squaredNorm();
  };
  CorrectionOpts opts;
  opts.t_max = 500;
  opts.gamma = 1e-3;
  Matrix Y1 = fam.correct_full(X, Y0, opts);
  CHECK(score(Y1) < 0.5 * score(Y0));
}

TEST_CASE("unrolled correction gradient matches finite differences") {
  QpFamily fam = generate_qp_family(41, 12, 4, 8, QpFamily::Kind::quadratic);
  Rng rng(42);
  const int m = fam.partial_dim();
  Matrix X = rng.uniform_matrix(2, 4, -1.0, 1.0);
  Matrix Z0 = 2.0 * rng.normal_matrix(2, m);
  CorrectionOpts opts;
  opts.t_max = 5;
  opts.gamma = 1e-3;
  opts.tol = 0.0;  // fixed iteration count so the map stays differentiable

  auto f = [&](const Eigen::VectorXd& zv) {
    CompletionResult cr = fam.complete(X, from_vec(zv, 2, m));
    fam.correct_partial(X, cr, opts);
    return fam.objective(X, cr.Y).sum();
  };

  Tape t;
  Var z = t.leaf(Z0);
  Completed c = fam.complete_t(z, X);
  Var y = fam.correct_partial_unroll_t(c, X, opts);
  t.backward(sum(fam.objective_t(y, X)));
  CHECK(finite_difference_check(f, to_vec(Z0), to_vec(t.grad(z))) < 1e-5);
}

TEST_CASE("recorded residuals and objective agree with the numeric batch API") {
  QpFamily fam = generate_qp_family(51, 18, 7, 11, QpFamily::Kind::sine);
  Rng rng(52);
  Matrix X = rng.uniform_matrix(5, 7, -1.0, 1.0);
  Matrix Y = rng.normal_matrix(5, 18);
  Tape t;
  Var yv = t.leaf(Y);
  CHECK((t.value(fam.objective_t(yv, X)).col(0).transpose() -
         fam.objective(X, Y).transpose())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((t.value(fam.eq_resid_t(yv, X)) - fam.eq_resid(X, Y)).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((t.value(fam.ineq_resid_t(yv, X)) - fam.ineq_resid(X, Y))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("sine objective differs from quadratic and stays bounded below") {
  QpFamily quad = generate_qp_family(61, 10, 4, 6, QpFamily::Kind::quadratic);
  QpFamily sine = quad;
  sine.kind = QpFamily::Kind::sine;
  Rng rng(62);
  Matrix X = rng.uniform_matrix(3, 4, -1.0, 1.0);
  Matrix Y = rng.normal_matrix(3, 10);
  Vector fq = quad.objective(X, Y);
  Vector fs = sine.objective(X, Y);
  CHECK((fq - fs).cwiseAbs().maxCoeff() > 1e-8);
  // Quadratic part dominates: both are finite for wild points.
  Vector fwild = sine.objective(X, 100.0 * Y);
  CHECK(fwild.allFinite());
}

TEST_CASE("family and instance files round trip bit exactly") {
  QpFamily fam = generate_qp_family(71, 24, 9, 13, QpFamily::Kind::sine);
  const std::string fpath = "qp_family_test.bin";
  save_family(fpath, fam);
  QpFamily fam2 = load_family(fpath);
  std::remove(fpath.c_str());
  CHECK(fam2.kind == fam.kind);
  CHECK((fam2.A - fam.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fam2.G - fam.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fam2.q_diag - fam.q_diag).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fam2.p - fam.p).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fam2.h_rhs - fam.h_rhs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fam2.partial_idx == fam.partial_idx);
  CHECK(fam2.dep_idx == fam.dep_idx);
  // Derived quantities were rebuilt on load.
  CHECK((fam2.geff() - fam.geff()).cwiseAbs().maxCoeff() == 0.0);

  InstanceSet set = sample_instances(fam, 36, 9);
  CHECK(set.n_train == 30);
  CHECK(set.n_val == 3);
  CHECK(set.n_test == 3);
  const std::string ipath = "qp_instances_test.bin";
  save_instances(ipath, set);
  InstanceSet set2 = load_instances(ipath);
  std::remove(ipath.c_str());
  CHECK((set2.X - set.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK(set2.n_train == set.n_train);
  CHECK(set2.has_labels == set.has_labels);
}
