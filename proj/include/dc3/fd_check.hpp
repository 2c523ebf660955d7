#pragma once

#include <functional>

#include <Eigen/Core>

namespace dc3 {

// Central finite-difference check of an analytic gradient.
// Returns max_i |analytic_i - central_i| / max(1, |analytic_i|).
inline double finite_difference_check(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& point, const Eigen::VectorXd& analytic,
    double eps = 1e-6) {
  double worst = 0.0;
  Eigen::VectorXd p = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double x0 = p(i);
    p(i) = x0 + eps;
    const double fp = f(p);
    p(i) = x0 - eps;
    const double fm = f(p);
    p(i) = x0;
    const double central = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic(i) - central) /
                       std::max(1.0, std::abs(analytic(i)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dc3
