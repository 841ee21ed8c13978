#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "gsno/errors.hpp"

namespace gsno {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Uniform grid x_i = i*dx on [0, 1], i = 0..n-1.
class SpatialGrid {
 public:
  explicit SpatialGrid(Index n) : n_(n) {
    if (n < 2) throw ShapeError("SpatialGrid needs at least 2 points");
    dx_ = 1.0 / static_cast<double>(n - 1);
  }

  /// Grid with step `dx`; 1/dx must be (close to) an integer.
  static SpatialGrid with_step(double dx) {
    if (!(dx > 0.0) || dx > 1.0) throw ShapeError("grid step must lie in (0, 1]");
    const double cells = std::round(1.0 / dx);
    if (std::abs(cells * dx - 1.0) > 1e-9) throw ShapeError("1/dx is not an integer");
    return SpatialGrid(static_cast<Index>(cells) + 1);
  }

  Index size() const noexcept { return n_; }
  double dx() const noexcept { return dx_; }
  double x(Index i) const noexcept { return i == n_ - 1 ? 1.0 : static_cast<double>(i) * dx_; }

  VectorXd points() const {
    VectorXd xs(n_);
    for (Index i = 0; i < n_; ++i) xs[i] = x(i);
    return xs;
  }

  friend bool operator==(const SpatialGrid& a, const SpatialGrid& b) { return a.n_ == b.n_; }

 private:
  Index n_;
  double dx_;
};

/// Composite trapezoid rule for samples on a uniform grid.
template <typename Derived>
typename Derived::Scalar trapezoid(const Eigen::MatrixBase<Derived>& f,
                                   typename Derived::Scalar dx) {
  const Index n = f.size();
  if (n < 2) return typename Derived::Scalar(0);
  return dx * (f.sum() - typename Derived::Scalar(0.5) * (f[0] + f[n - 1]));
}

/// ||f||^2 on [0, 1] by the trapezoid rule.
template <typename Derived>
typename Derived::Scalar l2_squared(const Eigen::MatrixBase<Derived>& f,
                                    typename Derived::Scalar dx) {
  return trapezoid(f.cwiseAbs2(), dx);
}

/// First derivative on a uniform grid: central differences inside, second-order
/// one-sided stencils at both ends (needs n >= 3).
template <typename Derived>
Vec<typename Derived::Scalar> grid_derivative(const Eigen::MatrixBase<Derived>& f,
                                              typename Derived::Scalar dx) {
  using Scalar = typename Derived::Scalar;
  const Index n = f.size();
  if (n < 3) throw ShapeError("grid_derivative needs n >= 3");
  Vec<Scalar> d(n);
  const Scalar inv2h = Scalar(0.5) / dx;
  d.segment(1, n - 2) = (f.segment(2, n - 2) - f.segment(0, n - 2)) * inv2h;
  d[0] = (Scalar(-3) * f[0] + Scalar(4) * f[1] - f[2]) * inv2h;
  d[n - 1] = (Scalar(3) * f[n - 1] - Scalar(4) * f[n - 2] + f[n - 3]) * inv2h;
  return d;
}

/// Trapezoid-rule convolution (a*b)(x_i) = int_0^{x_i} a(x_i - y) b(y) dy,
/// approximated as dx * sum_j w_j a_{i-j} b_j with w_0 = w_i = 1/2.
template <typename DA, typename DB>
typename DA::Scalar convolve_at(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                Index i, typename DA::Scalar dx) {
  using Scalar = typename DA::Scalar;
  if (i == 0) return Scalar(0);
  Scalar s = Scalar(0.5) * (a[i] * b[0] + a[0] * b[i]);
  if (i > 1) s += a.segment(1, i - 1).reverse().dot(b.segment(1, i - 1));
  return dx * s;
}

/// (a*b) at every grid point. O(n^2).
template <typename DA, typename DB>
Vec<typename DA::Scalar> convolve(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                  typename DA::Scalar dx) {
  const Index n = a.size();
  if (b.size() != n) throw ShapeError("convolve: length mismatch");
  Vec<typename DA::Scalar> out(n);
  for (Index i = 0; i < n; ++i) out[i] = convolve_at(a, b, i, dx);
  return out;
}

}  // namespace gsno
