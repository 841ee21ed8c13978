#pragma once

#include <variant>

#include "gsno/grid.hpp"

namespace gsno {

/// beta(x, nu) = amplitude * cos((gamma + nu) * arccos(x)).
struct Chebyshev {
  double amplitude = 5.0;
  double gamma = 3.0;
};

/// beta(x, nu) = b.
struct Constant {
  double b = 0.0;
};

/// beta and its partials sampled on a rectangular (x, nu) grid, interpolated
/// bilinearly. Matrices are indexed (x index, nu index).
struct Tabulated {
  VectorXd xs;
  VectorXd nus;
  MatrixXd beta;
  MatrixXd beta_x;
  MatrixXd beta_nu;
  MatrixXd beta_xnu;
};

struct Partials {
  double x = 0.0;
  double nu = 0.0;
  double xnu = 0.0;
};

enum class DerivativeEval { Analytic, CentralFD };

/// Slices of beta and its partials at fixed nu on a list of points.
struct BetaSlices {
  VectorXd beta;
  VectorXd beta_x;
  VectorXd beta_nu;
  VectorXd beta_xnu;
};

/// A recirculation function on [0, 1] x [-nu_box, nu_box]. Immutable.
class RecircFamily {
 public:
  using Kind = std::variant<Chebyshev, Constant, Tabulated>;

  RecircFamily(Kind kind, double nu_box, DerivativeEval eval = DerivativeEval::Analytic,
               double fd_step = 1e-6);

  static RecircFamily chebyshev(double amplitude, double gamma, double nu_box = 5.0) {
    return RecircFamily(Chebyshev{amplitude, gamma}, nu_box);
  }
  static RecircFamily constant(double b, double nu_box = 5.0) {
    return RecircFamily(Constant{b}, nu_box);
  }

  double beta(double x, double nu) const;
  Partials partials(double x, double nu) const;

  /// beta(xs_i, nu) for every point.
  VectorXd sample(const VectorXd& xs, double nu) const;
  /// beta and all three partials at every point.
  BetaSlices sample_all(const VectorXd& xs, double nu) const;

  double nu_box() const noexcept { return nu_box_; }
  const Kind& kind() const noexcept { return kind_; }
  DerivativeEval derivative_eval() const noexcept { return eval_; }

  /// True when beta does not depend on nu.
  bool nu_independent() const noexcept { return std::holds_alternative<Constant>(kind_); }

 private:
  void check_domain(double x, double nu) const;
  double raw_beta(double x, double nu) const;
  Partials analytic_partials(double x, double nu) const;
  Partials fd_partials(double x, double nu) const;

  Kind kind_;
  double nu_box_;
  DerivativeEval eval_;
  double fd_step_;
};

/// Sampled sup-norm estimates over the family's box.
struct BoundsVector {
  double beta = 0.0;
  double beta_x = 0.0;
  double beta_nu = 0.0;
  double beta_xnu = 0.0;

  double alpha() const;
  /// max(B_beta, B_beta_nu), the constant in the k_nu estimate.
  double alpha_nu() const;
};

/// Sampled sup norms of |beta|, |beta_x|, |beta_nu|, |beta_xnu| on a uniform
/// x_samples-by-nu_samples grid of the box. These are lower estimates of the
/// true suprema.
BoundsVector bounds_over_box(const RecircFamily& f, Index x_samples, Index nu_samples);

/// Tabulate a family (values and partials) on a uniform grid of its box.
RecircFamily tabulate(const RecircFamily& f, Index x_points, Index nu_points);

}  // namespace gsno
