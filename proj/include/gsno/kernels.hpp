#pragma once

#include <optional>

#include "gsno/grid.hpp"
#include "gsno/recirc.hpp"

namespace gsno {

enum class Quadrature { Trapezoid, LeftRectangle };

struct VolterraConfig {
  Quadrature quadrature = Quadrature::Trapezoid;
  double residual_tol = 1e-10;
  // Re-evaluate the discrete equation after solving (doubles the cost).
  bool check_residual = false;
};

struct KernelSlice {
  SpatialGrid grid;
  double nu = 0.0;
  VectorXd values;
};

enum class BundleTargets { KOnly, GainOnly, Full };

/// k and l always; k_nu for GainOnly and Full; k_x, k_xnu for Full.
struct KernelBundle {
  SpatialGrid grid;
  double nu = 0.0;
  KernelSlice k;
  std::optional<KernelSlice> k_nu;
  std::optional<KernelSlice> k_x;
  std::optional<KernelSlice> k_xnu;
  KernelSlice l;
};

/// (a*b)(x_i) under the chosen quadrature. Trapezoid weights are 1/2 at both
/// ends; LeftRectangle uses j = 0..i-1 with unit weights.
template <typename DA, typename DB>
typename DA::Scalar quad_convolve_at(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                     Index i, typename DA::Scalar dx, Quadrature q) {
  using Scalar = typename DA::Scalar;
  if (q == Quadrature::Trapezoid) return convolve_at(a, b, i, dx);
  if (i == 0) return Scalar(0);
  return dx * a.segment(1, i).reverse().dot(b.segment(0, i));
}

template <typename DA, typename DB>
Vec<typename DA::Scalar> quad_convolve(const Eigen::MatrixBase<DA>& a,
                                       const Eigen::MatrixBase<DB>& b, typename DA::Scalar dx,
                                       Quadrature q) {
  const Index n = a.size();
  if (b.size() != n) throw ShapeError("convolution: length mismatch");
  Vec<typename DA::Scalar> out(n);
  for (Index i = 0; i < n; ++i) out[i] = quad_convolve_at(a, b, i, dx, q);
  return out;
}

/// Solve x = f + a*x by forward marching. With the trapezoid rule the diagonal
/// term (dx/2) a_0 x_i is moved to the left-hand side.
template <typename DF, typename DA>
Vec<typename DF::Scalar> march_volterra(const Eigen::MatrixBase<DF>& f,
                                        const Eigen::MatrixBase<DA>& a, typename DF::Scalar dx,
                                        Quadrature q = Quadrature::Trapezoid) {
  using Scalar = typename DF::Scalar;
  const Index n = f.size();
  if (a.size() != n) throw ShapeError("march_volterra: length mismatch");
  Vec<Scalar> x(n);
  if (n == 0) return x;
  // ar[m] = a[n-1-m], so a_{i-j} for j = lo..hi is a contiguous run of ar.
  const Vec<Scalar> ar = a.reverse();
  Scalar diag = Scalar(1);
  if (q == Quadrature::Trapezoid) {
    diag = Scalar(1) - Scalar(0.5) * dx * a[0];
    if (std::abs(static_cast<double>(diag)) < 1e-12)
      throw SolverError("implicit diagonal 1 - dx*a(0)/2 vanishes; refine the grid");
  }
  x[0] = f[0];
  for (Index i = 1; i < n; ++i) {
    Scalar s;
    if (q == Quadrature::Trapezoid) {
      s = Scalar(0.5) * a[i] * x[0];
      if (i > 1) s += ar.segment(n - i, i - 1).dot(x.segment(1, i - 1));
    } else {
      s = ar.segment(n - 1 - i, i).dot(x.segment(0, i));
    }
    x[i] = (f[i] + dx * s) / diag;
  }
  return x;
}

/// max_i |x_i - f_i - (a*x)_i|.
double volterra_residual(const VectorXd& x, const VectorXd& f, const VectorXd& a, double dx,
                         Quadrature q);

/// k = -beta + beta*k.
KernelSlice solve_k(const VectorXd& beta, const SpatialGrid& grid, const VolterraConfig& cfg = {},
                    double nu = 0.0);

/// k_nu = -beta_nu + beta_nu*k + beta*k_nu.
KernelSlice solve_k_nu(const VectorXd& beta, const VectorXd& beta_nu, const KernelSlice& k,
                       const VolterraConfig& cfg = {});

/// k_x = -beta_x + beta(0) k + beta_x*k.
KernelSlice eval_k_x(const VectorXd& beta_x, double beta0, const KernelSlice& k,
                     Quadrature q = Quadrature::Trapezoid);

/// k_xnu = -beta_xnu + beta_nu(0) k + beta(0) k_nu + beta_xnu*k + beta_x*k_nu.
KernelSlice eval_k_xnu(const BetaSlices& beta, const KernelSlice& k, const KernelSlice& k_nu,
                       Quadrature q = Quadrature::Trapezoid);

/// l = k + k*l.
KernelSlice solve_l(const KernelSlice& k, const VolterraConfig& cfg = {});

KernelBundle solve_bundle(const RecircFamily& f, double nu, const SpatialGrid& grid,
                          const VolterraConfig& cfg = {},
                          BundleTargets which = BundleTargets::Full);

/// Largest |value| / bound over the sampled (x, nu) points; a ratio <= 1
/// means the bound holds everywhere on the sample.
///   k:     B_beta e^{B_beta x}
///   k_nu:  a_nu e^{a_nu x} (1 + a_nu x), a_nu = max(B_beta, B_beta_nu)
///   k_xnu: a e^{a x} (1 + 2a) + a^2 x e^{a x} (a + 1), a = max of all four
///   l:     kb e^{kb x}, kb = B_beta e^{B_beta}
struct KernelBoundRatios {
  double k = 0.0;
  double k_nu = 0.0;
  double k_xnu = 0.0;
  double l = 0.0;
  std::size_t points = 0;

  bool holds(double slack = 0.01) const {
    const double lim = 1.0 + slack;
    return k <= lim && k_nu <= lim && k_xnu <= lim && l <= lim;
  }
};

KernelBoundRatios kernel_bound_ratios(const RecircFamily& f, const BoundsVector& b, const VectorXd& nus,
                                      const SpatialGrid& grid, const VolterraConfig& cfg = {});

}  // namespace gsno
