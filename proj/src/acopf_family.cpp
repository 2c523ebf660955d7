#include "dc3/acopf/family.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace dc3::acopf {

using dc3::Matrix;
using dc3::Rng;
using dc3::Tape;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

struct AcopfFamily::Trace {
  Matrix vm, va;  // B x nb, the converged (or last) voltage profile
  std::vector<std::uint8_t> ok;
  int max_iters = 0;
};

namespace {

// Complex injections and their voltage Jacobians at one operating point.
struct PfPoint {
  CVector V, Ibus, S;
  CMatrix dS_dVm, dS_dVa;
};

PfPoint pf_point(const CMatrix& Y, const Eigen::VectorXd& vm,
                 const Eigen::VectorXd& va, bool with_jac) {
  PfPoint p;
  const Eigen::Index nb = vm.size();
  p.V.resize(nb);
  for (Eigen::Index b = 0; b < nb; ++b) p.V(b) = std::polar(vm(b), va(b));
  p.Ibus = Y * p.V;
  p.S = p.V.cwiseProduct(p.Ibus.conjugate());
  if (!with_jac) return p;
  CVector Vnorm(nb);
  for (Eigen::Index b = 0; b < nb; ++b)
    Vnorm(b) = vm(b) == 0.0 ? std::polar(1.0, va(b)) : p.V(b) / vm(b);
  // Both Jacobians are diag * Y * diag plus a diagonal, so entrywise scaling
  // of conj(Y) beats the matrix products by a factor of nb.
  const std::complex<double> im(0.0, 1.0);
  p.dS_dVm = (p.V * Vnorm.conjugate().transpose()).cwiseProduct(Y.conjugate());
  p.dS_dVm.diagonal() += p.Ibus.conjugate().cwiseProduct(Vnorm);
  p.dS_dVa = -im * (p.V * p.V.conjugate().transpose()).cwiseProduct(Y.conjugate());
  p.dS_dVa.diagonal() += im * p.V.cwiseProduct(p.Ibus.conjugate());
  return p;
}

}  // namespace

int AcopfFamily::va_col(int b) const {
  const int pos = va_pos_[static_cast<std::size_t>(b)];
  if (pos < 0) throw ContractError("va_col: reference bus has no angle column");
  return 2 * ng_ + nb_ + pos;
}

AcopfFamily::AcopfFamily(const CaseData& c, Options opt) : opt_(opt) {
  nb_ = static_cast<int>(c.bus.rows());
  ng_ = static_cast<int>(c.gen.rows());
  if (nb_ < 2 || ng_ < 2)
    throw ContractError("acopf: need >= 2 buses and >= 2 generators");
  Ybus_ = build_admittance(c);

  {
    std::unordered_map<long long, int> id_to_pos;
    for (int b = 0; b < nb_; ++b)
      id_to_pos[static_cast<long long>(c.bus(b, col::BUS_I))] = b;
    bus_gen_.assign(static_cast<std::size_t>(nb_), -1);

    // Generators sorted by bus position; gencost rows follow their generator.
    std::vector<int> order(static_cast<std::size_t>(ng_));
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> pos(static_cast<std::size_t>(ng_));
    for (int g = 0; g < ng_; ++g) {
      if (c.gen(g, col::GEN_STATUS) == 0.0)
        throw ContractError("acopf: out-of-service generators unsupported");
      auto it = id_to_pos.find(static_cast<long long>(c.gen(g, col::GEN_BUS)));
      if (it == id_to_pos.end())
        throw ContractError("acopf: generator " + std::to_string(g + 1) +
                            " sits on an unknown bus");
      pos[static_cast<std::size_t>(g)] = it->second;
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return pos[static_cast<std::size_t>(a)] < pos[static_cast<std::size_t>(b)];
    });

    pmin_.resize(ng_); pmax_.resize(ng_);
    qmin_.resize(ng_); qmax_.resize(ng_);
    c2_.resize(ng_); c1_.resize(ng_); c0_.resize(ng_);
    gen_bus_.resize(static_cast<std::size_t>(ng_));
    for (int k = 0; k < ng_; ++k) {
      const int g = order[static_cast<std::size_t>(k)];
      const int b = pos[static_cast<std::size_t>(g)];
      if (bus_gen_[static_cast<std::size_t>(b)] >= 0)
        throw ContractError("acopf: multiple generators on one bus");
      bus_gen_[static_cast<std::size_t>(b)] = k;
      gen_bus_[static_cast<std::size_t>(k)] = b;
      pmin_(k) = c.gen(g, col::PMIN) / c.base_mva;
      pmax_(k) = c.gen(g, col::PMAX) / c.base_mva;
      qmin_(k) = c.gen(g, col::QMIN) / c.base_mva;
      qmax_(k) = c.gen(g, col::QMAX) / c.base_mva;
      if (c.gencost(g, col::COST_MODEL) != 2.0 ||
          c.gencost(g, col::NCOST) != 3.0)
        throw ContractError("acopf: only quadratic polynomial costs supported");
      // Cost of per-unit dispatch, divided by base^2 so values stay O(1).
      c2_(k) = c.gencost(g, col::C2);
      c1_(k) = c.gencost(g, col::C1) / c.base_mva;
      c0_(k) = c.gencost(g, col::C0) / (c.base_mva * c.base_mva);
    }
  }

  for (int b = 0; b < nb_; ++b) {
    if (c.bus(b, col::BUS_TYPE) == 3.0) {
      if (ref_ >= 0) throw ContractError("acopf: multiple reference buses");
      ref_ = b;
    }
  }
  if (ref_ < 0) throw ContractError("acopf: no reference bus");
  ref_gen_ = bus_gen_[static_cast<std::size_t>(ref_)];
  if (ref_gen_ < 0)
    throw ContractError("acopf: reference bus has no generator");

  va_pos_.assign(static_cast<std::size_t>(nb_), -1);
  for (int b = 0; b < nb_; ++b) {
    if (b != ref_) {
      va_pos_[static_cast<std::size_t>(b)] =
          static_cast<int>(nonref_bus_.size());
      nonref_bus_.push_back(b);
    }
    if (bus_gen_[static_cast<std::size_t>(b)] < 0) load_bus_.push_back(b);
  }
  for (int g = 0; g < ng_; ++g)
    if (g != ref_gen_) nonref_gen_.push_back(g);

  vmin_.resize(nb_); vmax_.resize(nb_);
  RowVec pd0(nb_), qd0(nb_);
  for (int b = 0; b < nb_; ++b) {
    vmin_(b) = c.bus(b, col::VMIN);
    vmax_(b) = c.bus(b, col::VMAX);
    if (!(vmin_(b) > 0.0 && vmax_(b) > vmin_(b)))
      throw ContractError("acopf: bad voltage limits at bus row " +
                          std::to_string(b + 1));
    pd0(b) = c.bus(b, col::PD) / c.base_mva;
    qd0(b) = c.bus(b, col::QD) / c.base_mva;
  }
  x0_.resize(2 * nb_);
  x0_ << pd0, qd0;

  const int m = partial_dim();
  z_lo_.resize(m); z_hi_.resize(m);
  for (std::size_t k = 0; k < nonref_gen_.size(); ++k) {
    z_lo_(static_cast<int>(k)) = pmin_(nonref_gen_[k]);
    z_hi_(static_cast<int>(k)) = pmax_(nonref_gen_[k]);
  }
  for (int g = 0; g < ng_; ++g) {
    const int b = gen_bus_[static_cast<std::size_t>(g)];
    z_lo_(ng_ - 1 + g) = vmin_(b);
    z_hi_(ng_ - 1 + g) = vmax_(b);
  }
}

Vector AcopfFamily::objective(const Matrix&, const Matrix& Y) const {
  Matrix pg = Y.leftCols(ng_);
  return (pg.array().square().rowwise() * c2_.array() +
          pg.array().rowwise() * c1_.array())
             .rowwise()
             .sum()
             .matrix() +
         Vector::Constant(Y.rows(), c0_.sum());
}

Matrix AcopfFamily::eq_resid(const Matrix& X, const Matrix& Y) const {
  if (Y.cols() != n() || X.cols() != input_dim() || Y.rows() != X.rows())
    throw ShapeError("acopf eq_resid: bad operand shapes");
  const Eigen::Index B = Y.rows();
  Matrix R(B, 2 * nb_);
  for (Eigen::Index i = 0; i < B; ++i) {
    Eigen::VectorXd vm = Y.row(i).segment(2 * ng_, nb_).transpose();
    Eigen::VectorXd va = Eigen::VectorXd::Zero(nb_);
    for (int b : nonref_bus_) va(b) = Y(i, va_col(b));
    PfPoint p = pf_point(Ybus_, vm, va, false);
    for (int b = 0; b < nb_; ++b) {
      const int g = bus_gen_[static_cast<std::size_t>(b)];
      const double pg = g >= 0 ? Y(i, pg_col(g)) : 0.0;
      const double qg = g >= 0 ? Y(i, qg_col(g)) : 0.0;
      R(i, b) = p.S(b).real() + X(i, b) - pg;
      R(i, nb_ + b) = p.S(b).imag() + X(i, nb_ + b) - qg;
    }
  }
  return R;
}

Matrix AcopfFamily::ineq_resid(const Matrix&, const Matrix& Y) const {
  if (Y.cols() != n()) throw ShapeError("acopf ineq_resid: bad Y shape");
  const Eigen::Index B = Y.rows();
  Matrix R(B, n_ineq());
  Matrix pg = Y.leftCols(ng_);
  Matrix qg = Y.middleCols(ng_, ng_);
  Matrix vm = Y.middleCols(2 * ng_, nb_);
  R.leftCols(ng_) = pg.rowwise() - pmax_;
  R.middleCols(ng_, ng_) = (-pg).rowwise() + pmin_;
  R.middleCols(2 * ng_, ng_) = qg.rowwise() - qmax_;
  R.middleCols(3 * ng_, ng_) = (-qg).rowwise() + qmin_;
  R.middleCols(4 * ng_, nb_) = vm.rowwise() - vmax_;
  R.rightCols(nb_) = (-vm).rowwise() + vmin_;
  return R;
}

Matrix AcopfFamily::decode_partial(const Matrix& raw) const {
  if (raw.cols() != partial_dim())
    throw ShapeError("acopf decode_partial: bad width");
  Matrix s = (1.0 / (1.0 + (-raw.array()).exp())).matrix();
  return (s.array().rowwise() * (z_hi_ - z_lo_).array()).matrix().rowwise() +
         z_lo_;
}

Matrix AcopfFamily::decode_full(const Matrix& raw) const {
  if (raw.cols() != n()) throw ShapeError("acopf decode_full: bad width");
  const int boxed = 2 * ng_ + nb_;
  RowVec lo(boxed), hi(boxed);
  lo << pmin_, qmin_, vmin_;
  hi << pmax_, qmax_, vmax_;
  Matrix out(raw.rows(), n());
  Matrix s = (1.0 / (1.0 + (-raw.leftCols(boxed).array()).exp())).matrix();
  out.leftCols(boxed) =
      (s.array().rowwise() * (hi - lo).array()).matrix().rowwise() + lo;
  out.rightCols(nb_ - 1) = raw.rightCols(nb_ - 1);
  return out;
}

Matrix AcopfFamily::partial_of(const Matrix& Y) const {
  Matrix Z(Y.rows(), partial_dim());
  for (std::size_t k = 0; k < nonref_gen_.size(); ++k)
    Z.col(static_cast<int>(k)) = Y.col(pg_col(nonref_gen_[k]));
  for (int g = 0; g < ng_; ++g)
    Z.col(ng_ - 1 + g) = Y.col(vm_col(gen_bus_[static_cast<std::size_t>(g)]));
  return Z;
}

CompletionResult AcopfFamily::complete_impl(const Matrix& X, const Matrix& Z,
                                            const Trace* warm) const {
  if (Z.cols() != partial_dim() || X.cols() != input_dim() ||
      X.rows() != Z.rows())
    throw ShapeError("acopf complete: bad operand shapes");
  const Eigen::Index B = Z.rows();
  const int nd = static_cast<int>(load_bus_.size());
  const int nr = static_cast<int>(nonref_bus_.size());
  const int m1 = nd + nr;  // unknowns: vm at load buses, va at non-slack buses

  auto tr = std::make_shared<Trace>();
  tr->vm.resize(B, nb_);
  tr->va.setZero(B, nb_);
  tr->ok.assign(static_cast<std::size_t>(B), 0);

  CompletionResult out;
  out.Y.resize(B, n());
  out.ok.assign(static_cast<std::size_t>(B), 0);

  Eigen::VectorXd r(m1), step(m1);
  Matrix J(m1, m1);
  for (Eigen::Index i = 0; i < B; ++i) {
    Eigen::VectorXd vm(nb_), va = Eigen::VectorXd::Zero(nb_);
    if (warm != nullptr) {
      vm = warm->vm.row(i).transpose();
      va = warm->va.row(i).transpose();
      va(ref_) = 0.0;
    } else {
      vm.setOnes();
    }
    for (int g = 0; g < ng_; ++g)
      vm(gen_bus_[static_cast<std::size_t>(g)]) = Z(i, ng_ - 1 + g);

    // Net real injection target at non-slack buses.
    Eigen::VectorXd p_inj = Eigen::VectorXd::Zero(nb_);
    for (std::size_t k = 0; k < nonref_gen_.size(); ++k)
      p_inj(gen_bus_[static_cast<std::size_t>(nonref_gen_[k])]) =
          Z(i, static_cast<int>(k));

    bool converged = false;
    PfPoint p;
    for (int it = 0; it < opt_.newton_max_iters; ++it) {
      p = pf_point(Ybus_, vm, va, false);
      for (int k = 0; k < nr; ++k) {
        const int b = nonref_bus_[static_cast<std::size_t>(k)];
        r(k) = p.S(b).real() + X(i, b) - p_inj(b);
      }
      for (int k = 0; k < nd; ++k) {
        const int b = load_bus_[static_cast<std::size_t>(k)];
        r(nr + k) = p.S(b).imag() + X(i, nb_ + b);
      }
      if (r.cwiseAbs().maxCoeff() < opt_.newton_tol) {
        converged = true;
        tr->max_iters = std::max(tr->max_iters, it);
        break;
      }
      p = pf_point(Ybus_, vm, va, true);
      for (int col = 0; col < nd; ++col) {
        const int bc = load_bus_[static_cast<std::size_t>(col)];
        for (int k = 0; k < nr; ++k)
          J(k, col) = p.dS_dVm(nonref_bus_[static_cast<std::size_t>(k)], bc).real();
        for (int k = 0; k < nd; ++k)
          J(nr + k, col) =
              p.dS_dVm(load_bus_[static_cast<std::size_t>(k)], bc).imag();
      }
      for (int col = 0; col < nr; ++col) {
        const int bc = nonref_bus_[static_cast<std::size_t>(col)];
        for (int k = 0; k < nr; ++k)
          J(k, nd + col) =
              p.dS_dVa(nonref_bus_[static_cast<std::size_t>(k)], bc).real();
        for (int k = 0; k < nd; ++k)
          J(nr + k, nd + col) =
              p.dS_dVa(load_bus_[static_cast<std::size_t>(k)], bc).imag();
      }
      step = Eigen::PartialPivLU<Matrix>(J).solve(r);
      if (!step.allFinite()) break;
      for (int k = 0; k < nd; ++k)
        vm(load_bus_[static_cast<std::size_t>(k)]) -= step(k);
      for (int k = 0; k < nr; ++k)
        va(nonref_bus_[static_cast<std::size_t>(k)]) -= step(nd + k);
      if (vm.minCoeff() < 0.05 || vm.maxCoeff() > 5.0) break;
      tr->max_iters = std::max(tr->max_iters, it + 1);
    }

    tr->vm.row(i) = vm.transpose();
    tr->va.row(i) = va.transpose();
    tr->ok[static_cast<std::size_t>(i)] = converged ? 1 : 0;
    out.ok[static_cast<std::size_t>(i)] = converged ? 1 : 0;

    // Slack and reactive support follow from the solved flows.
    if (!converged) p = pf_point(Ybus_, vm, va, false);
    Eigen::RowVectorXd yrow(n());
    for (int g = 0; g < ng_; ++g) {
      const int b = gen_bus_[static_cast<std::size_t>(g)];
      yrow(pg_col(g)) =
          g == ref_gen_ ? p.S(ref_).real() + X(i, ref_) : p_inj(b);
      yrow(qg_col(g)) = p.S(b).imag() + X(i, nb_ + b);
    }
    yrow.segment(2 * ng_, nb_) = vm.transpose();
    for (int b : nonref_bus_) yrow(va_col(b)) = va(b);
    if (!yrow.allFinite()) {
      yrow.setZero();
      yrow.segment(2 * ng_, nb_).setOnes();
      tr->ok[static_cast<std::size_t>(i)] = 0;
      out.ok[static_cast<std::size_t>(i)] = 0;
    }
    out.Y.row(i) = yrow;
  }
  out.max_iters = tr->max_iters;
  out.cache = tr;
  return out;
}

CompletionResult AcopfFamily::complete(const Matrix& X, const Matrix& Z) const {
  return complete_impl(X, Z, nullptr);
}

CompletionResult AcopfFamily::complete_from(const Matrix& X, const Matrix& Z,
                                            const CompletionResult& prev) const {
  const auto* tr = static_cast<const Trace*>(prev.cache.get());
  if (tr == nullptr || tr->vm.rows() != Z.rows())
    return complete_impl(X, Z, nullptr);
  return complete_impl(X, Z, tr);
}

Matrix AcopfFamily::complete_backward(const CompletionResult& cr,
                                      const Matrix& /*X*/,
                                      const Matrix& dY) const {
  const auto* tr = static_cast<const Trace*>(cr.cache.get());
  if (tr == nullptr)
    throw ContractError("acopf complete_backward: missing completion cache");
  const Eigen::Index B = dY.rows();
  if (dY.cols() != n() || tr->vm.rows() != B)
    throw ShapeError("acopf complete_backward: bad operand shapes");

  const int nd = static_cast<int>(load_bus_.size());
  const int nr = static_cast<int>(nonref_bus_.size());
  const int m1 = nd + nr;
  const int m = partial_dim();
  const int nz2 = 1 + ng_;  // slack pg plus all qg

  Matrix dZ = Matrix::Zero(B, m);
  Matrix J1(m1, m1), J1z(m1, m), J2_z1(nz2, m1), J2_z(nz2, m);
  Eigen::RowVectorXd dz1(m1), dz2(nz2), dzd(m);

  for (Eigen::Index i = 0; i < B; ++i) {
    if (!tr->ok[static_cast<std::size_t>(i)]) continue;
    PfPoint p = pf_point(Ybus_, tr->vm.row(i).transpose(),
                         tr->va.row(i).transpose(), true);

    // Solver-stage Jacobian w.r.t. its unknowns (vm at loads, va off-slack)
    // and w.r.t. the partial variables.
    J1z.setZero();
    for (int col = 0; col < nd; ++col) {
      const int bc = load_bus_[static_cast<std::size_t>(col)];
      for (int k = 0; k < nr; ++k)
        J1(k, col) = p.dS_dVm(nonref_bus_[static_cast<std::size_t>(k)], bc).real();
      for (int k = 0; k < nd; ++k)
        J1(nr + k, col) =
            p.dS_dVm(load_bus_[static_cast<std::size_t>(k)], bc).imag();
    }
    for (int col = 0; col < nr; ++col) {
      const int bc = nonref_bus_[static_cast<std::size_t>(col)];
      for (int k = 0; k < nr; ++k)
        J1(k, nd + col) =
            p.dS_dVa(nonref_bus_[static_cast<std::size_t>(k)], bc).real();
      for (int k = 0; k < nd; ++k)
        J1(nr + k, nd + col) =
            p.dS_dVa(load_bus_[static_cast<std::size_t>(k)], bc).imag();
    }
    for (std::size_t kz = 0; kz < nonref_gen_.size(); ++kz) {
      const int b = gen_bus_[static_cast<std::size_t>(nonref_gen_[kz])];
      J1z(va_pos_[static_cast<std::size_t>(b)], static_cast<int>(kz)) = -1.0;
    }
    for (int g = 0; g < ng_; ++g) {
      const int bc = gen_bus_[static_cast<std::size_t>(g)];
      const int col = ng_ - 1 + g;
      for (int k = 0; k < nr; ++k)
        J1z(k, col) =
            p.dS_dVm(nonref_bus_[static_cast<std::size_t>(k)], bc).real();
      for (int k = 0; k < nd; ++k)
        J1z(nr + k, col) =
            p.dS_dVm(load_bus_[static_cast<std::size_t>(k)], bc).imag();
    }

    // Read-out stage: z2 = [slack pg, qg at every generator].
    J2_z1.setZero();
    J2_z.setZero();
    auto fill_z2_row = [&](int row, int bus, bool real_part) {
      for (int k = 0; k < nd; ++k) {
        const int bc = load_bus_[static_cast<std::size_t>(k)];
        const auto d = p.dS_dVm(bus, bc);
        J2_z1(row, k) = real_part ? d.real() : d.imag();
      }
      for (int k = 0; k < nr; ++k) {
        const int bc = nonref_bus_[static_cast<std::size_t>(k)];
        const auto d = p.dS_dVa(bus, bc);
        J2_z1(row, nd + k) = real_part ? d.real() : d.imag();
      }
      for (int g = 0; g < ng_; ++g) {
        const int bc = gen_bus_[static_cast<std::size_t>(g)];
        const auto d = p.dS_dVm(bus, bc);
        J2_z(row, ng_ - 1 + g) = real_part ? d.real() : d.imag();
      }
    };
    fill_z2_row(0, ref_, true);
    for (int g = 0; g < ng_; ++g)
      fill_z2_row(1 + g, gen_bus_[static_cast<std::size_t>(g)], false);

    // Split the incoming cotangent across the three variable groups.
    dzd.setZero();
    dz1.setZero();
    dz2.setZero();
    for (std::size_t kz = 0; kz < nonref_gen_.size(); ++kz)
      dzd(static_cast<int>(kz)) = dY(i, pg_col(nonref_gen_[kz]));
    dz2(0) = dY(i, pg_col(ref_gen_));
    for (int g = 0; g < ng_; ++g) dz2(1 + g) = dY(i, qg_col(g));
    for (int g = 0; g < ng_; ++g)
      dzd(ng_ - 1 + g) = dY(i, vm_col(gen_bus_[static_cast<std::size_t>(g)]));
    for (int k = 0; k < nd; ++k)
      dz1(k) = dY(i, vm_col(load_bus_[static_cast<std::size_t>(k)]));
    for (int k = 0; k < nr; ++k)
      dz1(nd + k) = dY(i, va_col(nonref_bus_[static_cast<std::size_t>(k)]));

    Eigen::RowVectorXd t = dz1 + dz2 * J2_z1;
    Eigen::VectorXd K =
        Eigen::PartialPivLU<Matrix>(J1.transpose()).solve(t.transpose());
    dZ.row(i) = dzd + dz2 * J2_z - K.transpose() * J1z;
  }
  return dZ;
}

void AcopfFamily::correct_partial(const Matrix& X, CompletionResult& cr,
                                  const CorrectionOpts& opts) const {
  Matrix Z = partial_of(cr.Y);
  Matrix vel = Matrix::Zero(Z.rows(), Z.cols());
  for (int t = 0; t < opts.t_max; ++t) {
    Matrix g = ineq_resid(X, cr.Y).cwiseMax(0.0);
    if (g.maxCoeff() < opts.tol) break;
    Matrix dY = ineq_grad_accum(X, cr.Y, 2.0 * g);
    Matrix dZ = complete_backward(cr, X, dY);
    vel = opts.momentum * vel + dZ;
    Z -= opts.gamma * vel;
    CompletionResult nr =
        complete_impl(X, Z, static_cast<const Trace*>(cr.cache.get()));
    // A row that stops converging keeps its previous point.
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (nr.ok[idx] && cr.ok[idx]) {
        cr.Y.row(i) = nr.Y.row(i);
      } else {
        Z.row(i) = partial_of(cr.Y.row(i)).row(0);
        vel.row(i).setZero();
        auto* trn = static_cast<Trace*>(nr.cache.get());
        const auto* tro = static_cast<const Trace*>(cr.cache.get());
        trn->vm.row(i) = tro->vm.row(i);
        trn->va.row(i) = tro->va.row(i);
        trn->ok[idx] = cr.ok[idx];
        nr.ok[idx] = cr.ok[idx];
      }
    }
    cr.cache = nr.cache;
    cr.max_iters = std::max(cr.max_iters, nr.max_iters);
  }
}

Matrix AcopfFamily::correct_full(const Matrix& X, Matrix Y,
                                 const CorrectionOpts& opts) const {
  Matrix vel = Matrix::Zero(Y.rows(), Y.cols());
  for (int t = 0; t < opts.t_max; ++t) {
    Matrix g = ineq_resid(X, Y).cwiseMax(0.0);
    Matrix h = eq_resid(X, Y);
    if (std::max(g.maxCoeff(), h.cwiseAbs().maxCoeff()) < opts.tol) break;
    Matrix dY = ineq_grad_accum(X, Y, 2.0 * g) + eq_grad_accum(X, Y, 2.0 * h);
    vel = opts.momentum * vel + dY;
    Y -= opts.gamma * vel;
    dc3::require_finite("acopf correct_full (step " + std::to_string(t) + ")",
                        Y);
  }
  return Y;
}

Matrix AcopfFamily::objective_grad(const Matrix&, const Matrix& Y) const {
  Matrix dY = Matrix::Zero(Y.rows(), Y.cols());
  dY.leftCols(ng_) =
      (Y.leftCols(ng_).array().rowwise() * (2.0 * c2_).array()).matrix().rowwise() +
      c1_;
  return dY;
}

Matrix AcopfFamily::ineq_grad_accum(const Matrix&, const Matrix& Y,
                                    const Matrix& W) const {
  if (W.cols() != n_ineq()) throw ShapeError("acopf ineq_grad_accum: bad W");
  Matrix dY = Matrix::Zero(Y.rows(), n());
  dY.leftCols(ng_) = W.leftCols(ng_) - W.middleCols(ng_, ng_);
  dY.middleCols(ng_, ng_) = W.middleCols(2 * ng_, ng_) - W.middleCols(3 * ng_, ng_);
  dY.middleCols(2 * ng_, nb_) = W.middleCols(4 * ng_, nb_) - W.rightCols(nb_);
  return dY;
}

Matrix AcopfFamily::eq_grad_accum(const Matrix&, const Matrix& Y,
                                  const Matrix& W) const {
  if (W.cols() != n_eq()) throw ShapeError("acopf eq_grad_accum: bad W");
  const Eigen::Index B = Y.rows();
  Matrix dY = Matrix::Zero(B, n());
  for (Eigen::Index i = 0; i < B; ++i) {
    Eigen::VectorXd vm = Y.row(i).segment(2 * ng_, nb_).transpose();
    Eigen::VectorXd va = Eigen::VectorXd::Zero(nb_);
    for (int b : nonref_bus_) va(b) = Y(i, va_col(b));
    PfPoint p = pf_point(Ybus_, vm, va, true);
    Eigen::VectorXd wp = W.row(i).head(nb_).transpose();
    Eigen::VectorXd wq = W.row(i).tail(nb_).transpose();
    for (int g = 0; g < ng_; ++g) {
      const int b = gen_bus_[static_cast<std::size_t>(g)];
      dY(i, pg_col(g)) = -wp(b);
      dY(i, qg_col(g)) = -wq(b);
    }
    Eigen::VectorXd dvm = p.dS_dVm.real().transpose() * wp +
                          p.dS_dVm.imag().transpose() * wq;
    Eigen::VectorXd dva = p.dS_dVa.real().transpose() * wp +
                          p.dS_dVa.imag().transpose() * wq;
    dY.row(i).segment(2 * ng_, nb_) = dvm.transpose();
    for (int b : nonref_bus_) dY(i, va_col(b)) = dva(b);
  }
  return dY;
}

Matrix AcopfFamily::initial_partial(const Matrix& X) const {
  return ((z_lo_ + z_hi_) / 2.0).replicate(X.rows(), 1);
}

// ---- tape path -------------------------------------------------------------

Var AcopfFamily::decode_partial_t(Var raw) const {
  Tape& t = *raw.tape;
  Var s = dc3::sigmoid(raw);
  return dc3::add(dc3::mul(s, t.constant(z_hi_ - z_lo_)), t.constant(z_lo_));
}

Var AcopfFamily::decode_full_t(Var raw) const {
  Tape& t = *raw.tape;
  const int boxed = 2 * ng_ + nb_;
  RowVec lo(boxed), hi(boxed);
  lo << pmin_, qmin_, vmin_;
  hi << pmax_, qmax_, vmax_;
  Var box = dc3::slice_cols(raw, 0, boxed);
  box = dc3::add(dc3::mul(dc3::sigmoid(box), t.constant(hi - lo)),
                 t.constant(lo));
  return dc3::concat_cols(box, dc3::slice_cols(raw, boxed, nb_ - 1));
}

Completed AcopfFamily::complete_t(Var Z, const Matrix& X) const {
  Tape& t = *Z.tape;
  auto cr = std::make_shared<CompletionResult>(complete(X, t.value(Z)));
  const int zi = Z.id;
  const AcopfFamily* self = this;
  const Matrix Xc = X;
  Completed c;
  c.Y = t.node("acopf_complete", cr->Y, {Z},
               [zi, self, cr, Xc](Tape& tp, const Matrix& g) {
                 tp.accumulate(zi, self->complete_backward(*cr, Xc, g));
               });
  c.cache = cr->cache;
  c.ok = cr->ok;
  return c;
}

Var AcopfFamily::objective_t(Var Y, const Matrix&) const {
  Tape& t = *Y.tape;
  Var pg = dc3::slice_cols(Y, 0, ng_);
  Var per = dc3::row_sum(dc3::add(dc3::mul(dc3::square(pg), t.constant(c2_)),
                                  dc3::mul(pg, t.constant(c1_))));
  return dc3::add(per, t.constant(Matrix::Constant(1, 1, c0_.sum())));
}

Var AcopfFamily::eq_resid_t(Var Y, const Matrix& X) const {
  Tape& t = *Y.tape;
  const Matrix Yv = t.value(Y);
  Matrix R = eq_resid(X, Yv);
  const int yi = Y.id;
  const AcopfFamily* self = this;
  const Matrix Xc = X;
  return t.node("acopf_pf_resid", std::move(R), {Y},
                [yi, self, Xc, Yv](Tape& tp, const Matrix& g) {
                  tp.accumulate(yi, self->eq_grad_accum(Xc, Yv, g));
                });
}

Var AcopfFamily::ineq_resid_t(Var Y, const Matrix&) const {
  Tape& t = *Y.tape;
  Var pg = dc3::slice_cols(Y, 0, ng_);
  Var qg = dc3::slice_cols(Y, ng_, ng_);
  Var vm = dc3::slice_cols(Y, 2 * ng_, nb_);
  Var r = dc3::concat_cols(dc3::sub(pg, t.constant(pmax_)),
                           dc3::sub(t.constant(pmin_), pg));
  r = dc3::concat_cols(r, dc3::sub(qg, t.constant(qmax_)));
  r = dc3::concat_cols(r, dc3::sub(t.constant(qmin_), qg));
  r = dc3::concat_cols(r, dc3::sub(vm, t.constant(vmax_)));
  return dc3::concat_cols(r, dc3::sub(t.constant(vmin_), vm));
}

Var AcopfFamily::correct_partial_unroll_t(Completed& c, const Matrix& X,
                                          const CorrectionOpts& opts) const {
  // The correction displacement enters as a constant: gradients flow through
  // the completed point only, with the flow Jacobians frozen there.
  Tape& t = *c.Y.tape;
  CompletionResult cr;
  cr.Y = t.value(c.Y);
  cr.cache = c.cache;
  cr.ok = c.ok;
  Matrix before = cr.Y;
  correct_partial(X, cr, opts);
  c.cache = cr.cache;
  return dc3::add(c.Y, t.constant(cr.Y - before));
}

Var AcopfFamily::correct_full_unroll_t(Var Y, const Matrix& X,
                                       const CorrectionOpts& opts) const {
  Tape& t = *Y.tape;
  const Matrix before = t.value(Y);
  Matrix after = correct_full(X, before, opts);
  return dc3::add(Y, t.constant(after - before));
}

InstanceSet sample_acopf_instances(const AcopfFamily& family, int count,
                                   std::uint64_t seed, double spread) {
  if (count < 1) throw ContractError("sample_acopf_instances: count >= 1");
  Rng rng(seed);
  const RowVec& x0 = family.nominal_x();
  InstanceSet set;
  set.X.resize(count, x0.cols());
  for (int i = 0; i < count; ++i)
    for (Eigen::Index j = 0; j < x0.cols(); ++j)
      set.X(i, j) = x0(j) * rng.uniform(1.0 - spread, 1.0 + spread);
  dc3::assign_split(set, count);
  return set;
}

}  // namespace dc3::acopf
