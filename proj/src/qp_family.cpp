#include "dc3/qp_family.hpp"

#include <algorithm>
#include <numeric>

#include "dc3/io.hpp"

namespace dc3 {

namespace {

Matrix scatter_matrix(int n, const std::vector<int>& idx) {
  Matrix P = Matrix::Zero(n, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) P(idx[j], static_cast<int>(j)) = 1.0;
  return P;
}

double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / sv(sv.size() - 1);
}

}  // namespace

void QpFamily::finalize() {
  const int nn = n();
  Pz_ = scatter_matrix(nn, partial_idx);
  Pphi_ = scatter_matrix(nn, dep_idx);
  A_part_ = A * Pz_;
  A_dep_ = A * Pphi_;
  dep_cond_ = condition_number(A_dep_);
  lu_dep_.compute(A_dep_);
  lu_dep_T_.compute(A_dep_.transpose());
  dphi_dz_ = -lu_dep_.solve(A_part_);
  G_part_ = G * Pz_;
  G_dep_ = G * Pphi_;
  G_eff_ = G_part_ + G_dep_ * dphi_dz_;
  Ez_ = Pz_ + Pphi_ * dphi_dz_;
}

Vector QpFamily::objective(const Matrix&, const Matrix& Y) const {
  Vector quad =
      0.5 * (Y.array().square().rowwise() * q_diag.array()).rowwise().sum();
  if (kind == Kind::quadratic)
    return quad + (Y.array().rowwise() * p.array()).rowwise().sum().matrix();
  return quad +
         (Y.array().sin().rowwise() * p.array()).rowwise().sum().matrix();
}

Matrix QpFamily::eq_resid(const Matrix& X, const Matrix& Y) const {
  if (Y.cols() != n() || X.cols() != n_eq())
    throw ShapeError("eq_resid: bad operand shapes");
  return Y * A.transpose() - X;
}

Matrix QpFamily::ineq_resid(const Matrix&, const Matrix& Y) const {
  if (Y.cols() != n()) throw ShapeError("ineq_resid: bad Y shape");
  return (Y * G.transpose()).rowwise() - h_rhs;
}

Matrix QpFamily::partial_of(const Matrix& Y) const { return Y * Pz_; }

CompletionResult QpFamily::complete(const Matrix& X, const Matrix& Z) const {
  if (Z.cols() != partial_dim() || X.cols() != n_eq() || X.rows() != Z.rows())
    throw ShapeError("complete: bad operand shapes");
  if (dep_cond_ >= 1e8)
    throw CompletionError("complete: dependent block is ill-conditioned");
  Matrix phi = lu_dep_.solve((X - Z * A_part_.transpose()).transpose()).transpose();
  CompletionResult cr;
  cr.Y = Z * Pz_.transpose() + phi * Pphi_.transpose();
  require_finite("complete_linear", cr.Y);
  cr.ok.assign(static_cast<std::size_t>(Z.rows()), 1);
  return cr;
}

Matrix QpFamily::backward_zphi(const Matrix& dZ_direct, const Matrix& dPhi) const {
  // dl/dz = dl/dz - (dl/dphi) A_dep^{-1} A_part, via a solve against the
  // transposed factorization; dphi/dz never materialized here.
  Matrix w = lu_dep_T_.solve(dPhi.transpose()).transpose();
  return dZ_direct - w * A_part_;
}

Matrix QpFamily::complete_backward(const CompletionResult&, const Matrix&,
                                   const Matrix& dY) const {
  return backward_zphi(dY * Pz_, dY * Pphi_);
}

void QpFamily::correct_partial(const Matrix& X, CompletionResult& cr,
                               const CorrectionOpts& opts) const {
  Matrix vel = Matrix::Zero(cr.Y.rows(), partial_dim());
  for (int t = 0; t < opts.t_max; ++t) {
    Matrix r = ineq_resid(X, cr.Y).cwiseMax(0.0);
    if (r.size() == 0 || r.maxCoeff() < opts.tol) break;
    Matrix dz = 2.0 * r * G_eff_;
    vel = opts.momentum * vel + dz;
    cr.Y -= opts.gamma * vel * Ez_.transpose();
    require_finite("correct (step " + std::to_string(t) + ")", cr.Y);
  }
}

Matrix QpFamily::correct_full(const Matrix& X, Matrix Y,
                              const CorrectionOpts& opts) const {
  Matrix vel = Matrix::Zero(Y.rows(), n());
  for (int t = 0; t < opts.t_max; ++t) {
    Matrix r = ineq_resid(X, Y).cwiseMax(0.0);
    Matrix h = eq_resid(X, Y);
    const double viol =
        std::max(r.size() ? r.maxCoeff() : 0.0, h.cwiseAbs().maxCoeff());
    if (viol < opts.tol) break;
    Matrix dy = 2.0 * r * G + 2.0 * h * A;
    vel = opts.momentum * vel + dy;
    Y -= opts.gamma * vel;
    require_finite("correct_full (step " + std::to_string(t) + ")", Y);
  }
  return Y;
}

Matrix QpFamily::objective_grad(const Matrix&, const Matrix& Y) const {
  Matrix g = Y.array().rowwise() * q_diag.array();
  if (kind == Kind::quadratic)
    g.rowwise() += p;
  else
    g += (Y.array().cos().rowwise() * p.array()).matrix();
  return g;
}

Matrix QpFamily::ineq_grad_accum(const Matrix&, const Matrix&,
                                 const Matrix& W) const {
  return W * G;
}

Matrix QpFamily::eq_grad_accum(const Matrix&, const Matrix&,
                               const Matrix& W) const {
  return W * A;
}

Matrix QpFamily::initial_partial(const Matrix& X) const {
  return (X * A_pinv.transpose()) * Pz_;
}

// ---- tape path -------------------------------------------------------------

Completed QpFamily::complete_t(Var Z, const Matrix& X) const {
  Tape& t = *Z.tape;
  CompletionResult cr = complete(X, t.value(Z));
  const int zi = Z.id;
  const QpFamily* self = this;
  Completed c;
  c.Y = t.node("complete_linear", cr.Y, {Z},
               [zi, self](Tape& tp, const Matrix& g) {
                 tp.accumulate(zi, self->backward_zphi(g * self->Pz_,
                                                       g * self->Pphi_));
               });
  c.ok = cr.ok;
  return c;
}

Var QpFamily::objective_t(Var Y, const Matrix&) const {
  Tape& t = *Y.tape;
  Var q = t.constant(q_diag);
  Var pv = t.constant(p);
  Var quad = scale(row_sum(mul(square(Y), q)), 0.5);
  Var lin = kind == Kind::quadratic ? row_sum(mul(Y, pv))
                                    : row_sum(mul(sin(Y), pv));
  return add(quad, lin);
}

Var QpFamily::eq_resid_t(Var Y, const Matrix& X) const {
  Tape& t = *Y.tape;
  return sub(matmul(Y, t.constant(A.transpose())), t.constant(X));
}

Var QpFamily::ineq_resid_t(Var Y, const Matrix&) const {
  Tape& t = *Y.tape;
  return sub(matmul(Y, t.constant(G.transpose())), t.constant(h_rhs));
}

Var QpFamily::correct_partial_unroll_t(Completed& c, const Matrix& X,
                                       const CorrectionOpts& opts) const {
  Tape& t = *c.Y.tape;
  Var geff = t.constant(G_eff_);
  Var ezt = t.constant(Ez_.transpose());
  Var Y = c.Y;
  Var vel;
  for (int step = 0; step < opts.t_max; ++step) {
    Var g = ineq_resid_t(Y, X);
    const Matrix gv = t.value(g).cwiseMax(0.0);
    if (gv.size() == 0 || gv.maxCoeff() < opts.tol) break;
    Var dz = scale(matmul(relu(g), geff), 2.0);
    vel = vel.valid() ? add(scale(vel, opts.momentum), dz) : dz;
    Y = sub(Y, scale(matmul(vel, ezt), opts.gamma));
  }
  return Y;
}

Var QpFamily::correct_full_unroll_t(Var Y, const Matrix& X,
                                    const CorrectionOpts& opts) const {
  Tape& t = *Y.tape;
  Var gmat = t.constant(G);
  Var amat = t.constant(A);
  Var vel;
  for (int step = 0; step < opts.t_max; ++step) {
    Var g = ineq_resid_t(Y, X);
    Var h = eq_resid_t(Y, X);
    const Matrix gv = t.value(g).cwiseMax(0.0);
    const double viol = std::max(gv.size() ? gv.maxCoeff() : 0.0,
                                 t.value(h).cwiseAbs().maxCoeff());
    if (viol < opts.tol) break;
    Var dy = scale(add(matmul(relu(g), gmat), matmul(h, amat)), 2.0);
    vel = vel.valid() ? add(scale(vel, opts.momentum), dy) : dy;
    Y = sub(Y, scale(vel, opts.gamma));
  }
  return Y;
}

// ---- generation and persistence ---------------------------------------------

QpFamily generate_qp_family(std::uint64_t seed, int n, int n_eq, int n_ineq,
                            QpFamily::Kind kind) {
  if (n_eq <= 0 || n_eq > n || n_ineq < 0)
    throw GenerationError("generate_qp_family: need 0 < n_eq <= n");
  Rng rng(seed);
  QpFamily f;
  f.kind = kind;
  f.q_diag = rng.uniform_matrix(1, n, 0.0, 1.0);
  f.p = rng.uniform_matrix(1, n, 0.0, 1.0);
  f.A = rng.normal_matrix(n_eq, n);
  f.G = rng.normal_matrix(n_ineq, n);
  f.A_pinv =
      f.A.completeOrthogonalDecomposition().pseudoInverse();
  f.h_rhs = (f.G * f.A_pinv).cwiseAbs().rowwise().sum().transpose();

  // Dependent block: last n_eq columns when well conditioned, otherwise the
  // strongest pivot columns of a column-pivoted orthogonal factorization.
  auto try_split = [&](const std::vector<int>& dep) -> bool {
    std::vector<char> is_dep(static_cast<std::size_t>(n), 0);
    for (int j : dep) is_dep[static_cast<std::size_t>(j)] = 1;
    f.dep_idx = dep;
    f.partial_idx.clear();
    for (int j = 0; j < n; ++j)
      if (!is_dep[static_cast<std::size_t>(j)]) f.partial_idx.push_back(j);
    f.finalize();
    return f.dep_condition() < 1e8;
  };

  std::vector<int> last(static_cast<std::size_t>(n_eq));
  std::iota(last.begin(), last.end(), n - n_eq);
  if (!try_split(last)) {
    Eigen::ColPivHouseholderQR<Matrix> qr(f.A);
    const auto& perm = qr.colsPermutation().indices();
    std::vector<int> dep(perm.data(), perm.data() + n_eq);
    std::sort(dep.begin(), dep.end());
    if (!try_split(dep))
      throw GenerationError(
          "generate_qp_family: no nonsingular dependent column block found "
          "(condition >= 1e8); resample with another seed");
  }
  return f;
}

InstanceSet sample_instances(const QpFamily& family, int count,
                             std::uint64_t seed) {
  if (count < 1) throw ContractError("sample_instances: count >= 1 required");
  Rng rng(seed);
  InstanceSet set;
  set.X = rng.uniform_matrix(count, family.n_eq(), -1.0, 1.0);
  assign_split(set, count);
  return set;
}

void save_family(const std::string& path, const QpFamily& f) {
  NamedMatrices out;
  Matrix meta(1, 4);
  meta << f.n(), f.n_eq(), f.n_ineq(), f.kind == QpFamily::Kind::sine ? 1 : 0;
  out.emplace_back("meta", meta);
  out.emplace_back("q_diag", f.q_diag);
  out.emplace_back("p", f.p);
  out.emplace_back("A", f.A);
  out.emplace_back("G", f.G);
  out.emplace_back("h_rhs", f.h_rhs);
  out.emplace_back("A_pinv", f.A_pinv);
  Matrix part(1, static_cast<Eigen::Index>(f.partial_idx.size()));
  for (std::size_t i = 0; i < f.partial_idx.size(); ++i)
    part(0, static_cast<Eigen::Index>(i)) = f.partial_idx[i];
  Matrix dep(1, static_cast<Eigen::Index>(f.dep_idx.size()));
  for (std::size_t i = 0; i < f.dep_idx.size(); ++i)
    dep(0, static_cast<Eigen::Index>(i)) = f.dep_idx[i];
  out.emplace_back("partial_idx", part);
  out.emplace_back("dep_idx", dep);
  save_matrices(path, out);
}

QpFamily load_family(const std::string& path) {
  NamedMatrices in = load_matrices(path);
  auto get = [&](const std::string& name) -> const Matrix& {
    for (const auto& [k, v] : in)
      if (k == name) return v;
    throw IoError(path + ": missing tensor '" + name + "'");
  };
  const Matrix& meta = get("meta");
  QpFamily f;
  f.kind = meta(0, 3) != 0.0 ? QpFamily::Kind::sine : QpFamily::Kind::quadratic;
  f.q_diag = get("q_diag");
  f.p = get("p");
  f.A = get("A");
  f.G = get("G");
  f.h_rhs = get("h_rhs");
  f.A_pinv = get("A_pinv");
  const Matrix& part = get("partial_idx");
  const Matrix& dep = get("dep_idx");
  for (Eigen::Index j = 0; j < part.cols(); ++j)
    f.partial_idx.push_back(static_cast<int>(part(0, j)));
  for (Eigen::Index j = 0; j < dep.cols(); ++j)
    f.dep_idx.push_back(static_cast<int>(dep(0, j)));
  if (static_cast<int>(meta(0, 0)) != f.n() ||
      static_cast<int>(meta(0, 1)) != f.n_eq() ||
      static_cast<int>(meta(0, 2)) != f.n_ineq())
    throw IoError(path + ": dimension metadata does not match payload");
  f.finalize();
  return f;
}

void save_instances(const std::string& path, const InstanceSet& set) {
  NamedMatrices out;
  Matrix meta(1, 4);
  meta << set.n_train, set.n_val, set.n_test, set.has_labels ? 1 : 0;
  out.emplace_back("meta", meta);
  out.emplace_back("X", set.X);
  if (set.has_labels) out.emplace_back("Y_labels", set.Y_labels);
  save_matrices(path, out);
}

InstanceSet load_instances(const std::string& path) {
  NamedMatrices in = load_matrices(path);
  if (in.size() < 2 || in[0].first != "meta" || in[1].first != "X")
    throw IoError(path + ": malformed instance file");
  InstanceSet set;
  const Matrix& meta = in[0].second;
  set.n_train = static_cast<int>(meta(0, 0));
  set.n_val = static_cast<int>(meta(0, 1));
  set.n_test = static_cast<int>(meta(0, 2));
  set.has_labels = meta(0, 3) != 0.0;
  set.X = in[1].second;
  if (set.n_train + set.n_val + set.n_test != set.X.rows())
    throw IoError(path + ": split sizes do not match X");
  if (set.has_labels) {
    if (in.size() < 3 || in[2].first != "Y_labels")
      throw IoError(path + ": labels flagged but missing");
    set.Y_labels = in[2].second;
  }
  return set;
}

}  // namespace dc3
