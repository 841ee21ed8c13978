#include "gsno/kernels.hpp"

namespace gsno {

namespace {

void check_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite()) throw SolverError(std::string(what) + " contains non-finite values");
}

void check_len(const VectorXd& v, const SpatialGrid& g, const char* what) {
  if (v.size() != g.size()) throw ShapeError(std::string(what) + ": length does not match grid");
}

VectorXd solve_checked(const VectorXd& f, const VectorXd& a, const SpatialGrid& grid,
                       const VolterraConfig& cfg, const char* what) {
  if (!(cfg.residual_tol > 0.0)) throw SolverError("residual_tol must be positive");
  VectorXd x = march_volterra(f, a, grid.dx(), cfg.quadrature);
  check_finite(x, what);
  if (cfg.check_residual) {
    const double r = volterra_residual(x, f, a, grid.dx(), cfg.quadrature);
    if (r > cfg.residual_tol * (1.0 + x.cwiseAbs().maxCoeff()))
      throw SolverError(std::string(what) + ": residual " + std::to_string(r) + " above tolerance");
  }
  return x;
}

}  // namespace

double volterra_residual(const VectorXd& x, const VectorXd& f, const VectorXd& a, double dx,
                         Quadrature q) {
  const VectorXd r = x - f - quad_convolve(a, x, dx, q);
  return r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
}

KernelSlice solve_k(const VectorXd& beta, const SpatialGrid& grid, const VolterraConfig& cfg,
                    double nu) {
  check_len(beta, grid, "solve_k");
  check_finite(beta, "beta slice");
  return {grid, nu, solve_checked(-beta, beta, grid, cfg, "k")};
}

KernelSlice solve_k_nu(const VectorXd& beta, const VectorXd& beta_nu, const KernelSlice& k,
                       const VolterraConfig& cfg) {
  check_len(beta, k.grid, "solve_k_nu");
  check_len(beta_nu, k.grid, "solve_k_nu");
  const VectorXd forcing = -beta_nu + quad_convolve(beta_nu, k.values, k.grid.dx(), cfg.quadrature);
  return {k.grid, k.nu, solve_checked(forcing, beta, k.grid, cfg, "k_nu")};
}

KernelSlice eval_k_x(const VectorXd& beta_x, double beta0, const KernelSlice& k, Quadrature q) {
  check_len(beta_x, k.grid, "eval_k_x");
  VectorXd v = -beta_x + beta0 * k.values + quad_convolve(beta_x, k.values, k.grid.dx(), q);
  check_finite(v, "k_x");
  return {k.grid, k.nu, std::move(v)};
}

KernelSlice eval_k_xnu(const BetaSlices& beta, const KernelSlice& k, const KernelSlice& k_nu,
                       Quadrature q) {
  check_len(beta.beta, k.grid, "eval_k_xnu");
  check_len(beta.beta_x, k.grid, "eval_k_xnu");
  check_len(beta.beta_nu, k.grid, "eval_k_xnu");
  check_len(beta.beta_xnu, k.grid, "eval_k_xnu");
  const double dx = k.grid.dx();
  VectorXd v = -beta.beta_xnu + beta.beta_nu[0] * k.values + beta.beta[0] * k_nu.values +
               quad_convolve(beta.beta_xnu, k.values, dx, q) +
               quad_convolve(beta.beta_x, k_nu.values, dx, q);
  check_finite(v, "k_xnu");
  return {k.grid, k.nu, std::move(v)};
}

KernelSlice solve_l(const KernelSlice& k, const VolterraConfig& cfg) {
  check_finite(k.values, "k slice");
  return {k.grid, k.nu, solve_checked(k.values, k.values, k.grid, cfg, "l")};
}

KernelBundle solve_bundle(const RecircFamily& f, double nu, const SpatialGrid& grid,
                          const VolterraConfig& cfg, BundleTargets which) {
  const VectorXd xs = grid.points();
  if (which == BundleTargets::KOnly) {
    KernelSlice k = solve_k(f.sample(xs, nu), grid, cfg, nu);
    KernelSlice l = solve_l(k, cfg);
    return {grid, nu, std::move(k), std::nullopt, std::nullopt, std::nullopt, std::move(l)};
  }
  const BetaSlices s = f.sample_all(xs, nu);
  KernelSlice k = solve_k(s.beta, grid, cfg, nu);
  KernelSlice k_nu = solve_k_nu(s.beta, s.beta_nu, k, cfg);
  KernelSlice l = solve_l(k, cfg);
  KernelBundle b{grid, nu, std::move(k), std::move(k_nu), std::nullopt, std::nullopt, std::move(l)};
  if (which == BundleTargets::Full) {
    b.k_x = eval_k_x(s.beta_x, s.beta[0], b.k, cfg.quadrature);
    b.k_xnu = eval_k_xnu(s, b.k, *b.k_nu, cfg.quadrature);
  }
  return b;
}

KernelBoundRatios kernel_bound_ratios(const RecircFamily& f, const BoundsVector& b, const VectorXd& nus,
                                      const SpatialGrid& grid, const VolterraConfig& cfg) {
  const Eigen::ArrayXd x = grid.points().array();
  const double B = b.beta, an = b.alpha_nu(), a = b.alpha(), kb = B * std::exp(B);
  const Eigen::ArrayXd bk = B * (B * x).exp();
  const Eigen::ArrayXd bnu = an * (an * x).exp() * (1.0 + an * x);
  const Eigen::ArrayXd bxnu = a * (a * x).exp() * (1.0 + 2.0 * a) + a * a * x * (a * x).exp() * (a + 1.0);
  const Eigen::ArrayXd bl = kb * (kb * x).exp();
  auto worst = [](const VectorXd& v, const Eigen::ArrayXd& bound) {
    return (v.array().abs() / bound.max(1e-300)).maxCoeff();
  };
  KernelBoundRatios r;
  for (Index j = 0; j < nus.size(); ++j) {
    const KernelBundle bundle = solve_bundle(f, nus[j], grid, cfg, BundleTargets::Full);
    r.k = std::max(r.k, worst(bundle.k.values, bk));
    r.k_nu = std::max(r.k_nu, worst(bundle.k_nu->values, bnu));
    r.k_xnu = std::max(r.k_xnu, worst(bundle.k_xnu->values, bxnu));
    r.l = std::max(r.l, worst(bundle.l.values, bl));
    r.points += static_cast<std::size_t>(x.size());
  }
  return r;
}

}  // namespace gsno
