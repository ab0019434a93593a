#pragma once

// Central finite differences, kept independent of the tape.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>

namespace dif::test {

/// d f / d x_i by central differences for every coordinate of x.
inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                        double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    x(i) = x0 + h;
    const double fp = f(x);
    x(i) = x0 - h;
    const double fm = f(x);
    x(i) = x0;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Jacobian of a vector field R^3 -> R^m by central differences.
inline Eigen::MatrixXd central_jacobian(const std::function<Eigen::VectorXd(const Eigen::Vector3d&)>& f,
                                        const Eigen::Vector3d& p, double h = 1e-5) {
  Eigen::MatrixXd j;
  for (int d = 0; d < 3; ++d) {
    Eigen::Vector3d a = p, b = p;
    a(d) += h;
    b(d) -= h;
    const Eigen::VectorXd col = (f(a) - f(b)) / (2.0 * h);
    if (d == 0) j.resize(col.size(), 3);
    j.col(d) = col;
  }
  return j;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref, double floor = 1e-12) {
  return (a - ref).norm() / std::max(ref.norm(), floor);
}

}  // namespace dif::test
