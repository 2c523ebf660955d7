#include "dc3/solvers.hpp"

#include <algorithm>
#include <cmath>

namespace dc3 {

QpAdmmSolver::QpAdmmSolver(const QpFamily& family, AdmmSettings settings)
    : family_(family), s_(settings) {
  if (family.kind != QpFamily::Kind::quadratic)
    throw SolverError("QpAdmmSolver: objective must be quadratic");
  const int n = family.n();
  const int me = family.n_eq();
  const int mi = family.n_ineq();
  M_.resize(me + mi, n);
  M_ << family.A, family.G;
  rho_.resize(me + mi);
  rho_.head(me).setConstant(s_.rho * s_.eq_rho_scale);
  rho_.tail(mi).setConstant(s_.rho);

  Matrix kkt = Matrix::Zero(n + me + mi, n + me + mi);
  kkt.topLeftCorner(n, n) = Matrix(family.q_diag.asDiagonal());
  kkt.topLeftCorner(n, n).diagonal().array() += s_.sigma;
  kkt.topRightCorner(n, me + mi) = M_.transpose();
  kkt.bottomLeftCorner(me + mi, n) = M_;
  kkt.bottomRightCorner(me + mi, me + mi).diagonal() = -rho_.cwiseInverse();
  kkt_.compute(kkt);
}

AdmmResult QpAdmmSolver::solve_one(const RowVec& x) const {
  const int n = family_.n();
  const int me = family_.n_eq();
  const int mi = family_.n_ineq();
  const int m = me + mi;
  if (x.cols() != me) throw ShapeError("solve_one: bad instance width");

  Vector l(m), u(m);
  l.head(me) = x.transpose();
  u.head(me) = x.transpose();
  l.tail(mi).setConstant(-std::numeric_limits<double>::infinity());
  u.tail(mi) = family_.h_rhs.transpose();

  const Vector p = family_.p.transpose();
  const Vector q = family_.q_diag.transpose();
  Vector y = Vector::Zero(n);      // primal
  Vector z = Vector::Zero(m);      // split copy of My
  Vector w = Vector::Zero(m);      // dual

  AdmmResult res;
  Vector rhs(n + m), sol(n + m);
  for (int it = 0; it < s_.max_iters; ++it) {
    rhs.head(n) = s_.sigma * y - p;
    rhs.tail(m) = z - w.cwiseQuotient(rho_);
    sol = kkt_.solve(rhs);
    Vector y_t = sol.head(n);
    Vector nu = sol.tail(m);
    Vector z_t = z + (nu - w).cwiseQuotient(rho_);
    y = s_.alpha * y_t + (1.0 - s_.alpha) * y;
    Vector z_relaxed = s_.alpha * z_t + (1.0 - s_.alpha) * z;
    Vector z_new =
        (z_relaxed + w.cwiseQuotient(rho_)).cwiseMax(l).cwiseMin(u);
    w += rho_.cwiseProduct(z_relaxed - z_new);
    z = z_new;

    if ((it + 1) % 25 == 0 || it + 1 == s_.max_iters) {
      Vector My = M_ * y;
      const double r_prim = (My - z).cwiseAbs().maxCoeff();
      Vector dual = q.cwiseProduct(y) + p + M_.transpose() * w;
      const double r_dual = dual.cwiseAbs().maxCoeff();
      if (r_prim < s_.tol && r_dual < s_.tol) {
        res.converged = true;
        res.iters = it + 1;
        break;
      }
    }
  }
  if (!res.converged) res.iters = s_.max_iters;
  res.y = y;
  return res;
}

Matrix QpAdmmSolver::solve_batch(const Matrix& X, Vector* obj_out) const {
  Matrix Y(X.rows(), family_.n());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    AdmmResult r = solve_one(X.row(i));
    if (!r.converged)
      throw SolverError("admm: instance " + std::to_string(i) +
                        " did not converge in " +
                        std::to_string(s_.max_iters) + " iterations");
    Y.row(i) = r.y.transpose();
  }
  if (obj_out != nullptr) *obj_out = family_.objective(X, Y);
  return Y;
}

namespace {

// Barrier state for one instance; all matrices are single-row batches so the
// family interface applies unchanged.
struct BarrierWork {
  const ProblemFamily& family;
  const Matrix& X1;  // 1 x d
  bool use_warm = true;
  // Last successful completion: reused verbatim when z repeats (the gradient
  // call right after an accepted step) and as a Newton warm start otherwise.
  mutable CompletionResult last_cr;
  mutable Matrix last_z;

  bool completion_at(const Matrix& z, CompletionResult* out) const {
    if (last_z.size() == z.size() &&
        (last_z.array() == z.array()).all()) {
      *out = last_cr;
      return true;
    }
    CompletionResult cr;
    try {
      cr = use_warm && last_cr.cache ? family.complete_from(X1, z, last_cr)
                                     : family.complete(X1, z);
      if (!cr.ok.empty() && !cr.ok[0] && use_warm && last_cr.cache)
        cr = family.complete(X1, z);  // warm start left the basin; retry cold
    } catch (const Error&) {
      return false;
    }
    if (!cr.ok.empty() && !cr.ok[0]) return false;
    last_cr = cr;
    last_z = z;
    *out = cr;
    return true;
  }

  // Returns false if completion fails or any inequality is active.
  bool eval(const Matrix& z, double mu, double* psi, Matrix* grad,
            Matrix* Y_out) const {
    CompletionResult cr;
    if (!completion_at(z, &cr)) return false;
    Matrix g = family.ineq_resid(X1, cr.Y);
    if (g.size() && g.maxCoeff() >= 0.0) return false;
    double val = family.objective(X1, cr.Y)(0);
    if (g.size()) val -= mu * (-g.array()).log().sum();
    if (!std::isfinite(val)) return false;
    if (psi) *psi = val;
    if (grad) {
      Matrix dY = family.objective_grad(X1, cr.Y);
      if (g.size()) {
        Matrix W = mu * (-g.array()).inverse().matrix();
        dY += family.ineq_grad_accum(X1, cr.Y, W);
      }
      *grad = family.complete_backward(cr, X1, dY);
    }
    if (Y_out) *Y_out = cr.Y;
    return true;
  }

  // Squared hinge of (g + margin); infinity when completion fails.
  double hinge(const Matrix& z, const double margin, Matrix* grad,
               double* gmax) const {
    CompletionResult cr;
    if (!completion_at(z, &cr))
      return std::numeric_limits<double>::infinity();
    Matrix g = family.ineq_resid(X1, cr.Y);
    if (gmax) *gmax = g.size() ? g.maxCoeff() : -1.0;
    Matrix r = (g.array() + margin).cwiseMax(0.0).matrix();
    if (grad) {
      Matrix dY = family.ineq_grad_accum(X1, cr.Y, Matrix(2.0 * r));
      *grad = family.complete_backward(cr, X1, dY);
    }
    return r.squaredNorm();
  }

  // Push z until every inequality clears -1e-6. Line-searched gradient
  // descent on the squared hinge of (g + margin).
  bool push_interior(Matrix& z) const {
    const double margin = 1e-4;
    double step = 1.0;
    for (int k = 0; k < 2000; ++k) {
      Matrix grad;
      double gmax;
      const double phi = hinge(z, margin, &grad, &gmax);
      if (!std::isfinite(phi)) return false;
      if (gmax < -1e-6) return true;
      const double gn2 = grad.squaredNorm();
      if (gn2 < 1e-24) return false;
      step = std::min(step * 4.0, 1e8);
      bool moved = false;
      for (int bt = 0; bt < 80; ++bt) {
        const double phi_try = hinge(z - step * grad, margin, nullptr, nullptr);
        if (phi_try <= phi - 1e-4 * step * gn2) {
          z -= step * grad;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) return false;
    }
    return false;
  }

  // Quasi-Newton (BFGS, inverse-form) descent on psi(z; mu) with Armijo
  // backtracking. The reduced space is small, so dense updates are cheap.
  bool minimize(Matrix& z, double mu, double grad_tol, int max_inner) const {
    double psi;
    Matrix grad;
    if (!eval(z, mu, &psi, &grad, nullptr)) return false;
    const Eigen::Index m = z.cols();
    Matrix H = Matrix::Identity(m, m) / std::max(1.0, grad.norm());
    for (int it = 0; it < max_inner; ++it) {
      if (grad.cwiseAbs().maxCoeff() < grad_tol) return true;
      Matrix dir = -(H * grad.transpose()).transpose();  // 1 x m
      double slope = (dir.array() * grad.array()).sum();
      if (!(slope < 0.0)) {  // curvature broke down, reset to steepest descent
        H = Matrix::Identity(m, m) / std::max(1.0, grad.norm());
        dir = -grad;
        slope = -grad.squaredNorm();
      }
      double t = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt) {
        Matrix z_try = z + t * dir;
        double psi_try;
        if (eval(z_try, mu, &psi_try, nullptr, nullptr) &&
            psi_try <= psi + 1e-4 * t * slope) {
          Matrix g_new;
          if (!eval(z_try, mu, nullptr, &g_new, nullptr)) return false;
          Eigen::VectorXd s = (z_try - z).transpose();
          Eigen::VectorXd y = (g_new - grad).transpose();
          const double sy = s.dot(y);
          if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            Matrix V = Matrix::Identity(m, m) - rho * s * y.transpose();
            H = V * H * V.transpose() + rho * s * s.transpose();
          }
          z = z_try;
          psi = psi_try;
          grad = g_new;
          moved = true;
          break;
        }
        t *= 0.5;
      }
      if (!moved) return grad.cwiseAbs().maxCoeff() < 10.0 * grad_tol;
    }
    return grad.cwiseAbs().maxCoeff() < 10.0 * grad_tol;
  }
};

}  // namespace

BarrierResult solve_reduced_barrier(const ProblemFamily& family,
                                    const Matrix& X,
                                    const BarrierSettings& st) {
  if (st.rounds < 1 || st.starts < 1)
    throw ContractError("solve_reduced_barrier: rounds and starts >= 1");
  BarrierResult out;
  out.Y.resize(X.rows(), family.n());
  out.obj.resize(X.rows());
  out.ok.assign(static_cast<std::size_t>(X.rows()), 0);
  Rng rng(st.seed);

  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Matrix X1 = X.row(i);
    BarrierWork w{family, X1};
    const Matrix z_base = family.initial_partial(X1);
    double best_obj = std::numeric_limits<double>::infinity();
    Matrix best_Y;

    auto try_start = [&](Matrix z, bool warm) {
      w.use_warm = warm;
      w.last_z.resize(0, 0);
      w.last_cr = CompletionResult{};
      if (!w.push_interior(z)) return false;

      double mu = st.mu0;
      double mu_ok = std::numeric_limits<double>::infinity();
      Matrix z_ok;
      for (int round = 0; round < st.rounds; ++round) {
        const double tol = std::max(st.stat_tol, 0.3 * mu);
        Matrix z_in = z;
        if (w.minimize(z, mu, tol, st.max_inner)) {
          z_ok = z;
          mu_ok = mu;
        } else {
          z = z_in;  // stalled round: keep the last converged iterate
          break;
        }
        if (mu_ok <= st.mu_stop) break;
        mu *= st.mu_factor;
      }
      if (!z_ok.size() || mu_ok > st.accept_mu) return false;
      Matrix Y1;
      double psi;
      if (!w.eval(z_ok, mu_ok, &psi, nullptr, &Y1)) return false;
      const double f = family.objective(X1, Y1)(0);
      if (f < best_obj) {
        best_obj = f;
        best_Y = Y1;
      }
      return true;
    };

    for (int attempt = 0; attempt < st.starts; ++attempt) {
      Matrix z = z_base;
      if (attempt > 0)
        z += 0.1 * std::max(1.0, z_base.norm()) *
             rng.normal_matrix(z.rows(), z.cols()) / std::sqrt(double(z.cols()));
      // Warm-started Newton completions first; a cold pass if that stalls.
      if (!try_start(z, true)) try_start(z, false);
    }
    if (best_Y.size()) {
      out.Y.row(i) = best_Y.row(0);
      out.obj(i) = best_obj;
      out.ok[static_cast<std::size_t>(i)] = 1;
    } else {
      out.Y.row(i).setZero();
      out.obj(i) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

Vector make_labels(const ProblemFamily& family, InstanceSet& set,
                   const BarrierSettings& settings) {
  BarrierResult r = solve_reduced_barrier(family, set.X, settings);
  for (std::size_t i = 0; i < r.ok.size(); ++i)
    if (!r.ok[i])
      throw SolverError("make_labels: instance " + std::to_string(i) +
                        " failed to solve");
  set.Y_labels = family.partial_of(r.Y);
  set.has_labels = true;
  return r.obj;
}

}  // namespace dc3
