#include "gsno/recirc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gsno {

namespace {

constexpr double kDomainSlack = 1e-12;
// Below this angle the x-derivatives use their series about theta = 0.
constexpr double kSmallTheta = 1e-4;

struct ChebyshevEval {
  double amplitude;
  double order;
  double theta;

  ChebyshevEval(const Chebyshev& c, double x, double nu)
      : amplitude(c.amplitude), order(c.gamma + nu), theta(std::acos(std::clamp(x, -1.0, 1.0))) {}

  double value() const { return amplitude * std::cos(order * theta); }

  double d_nu() const { return -amplitude * theta * std::sin(order * theta); }

  // A a sin(a t) / sin(t); removable singularity at t = 0 with limit A a^2.
  double d_x() const {
    const double a = order;
    if (theta < kSmallTheta) {
      const double t2 = theta * theta;
      return amplitude * a * a * (1.0 - (a * a - 1.0) * t2 / 6.0);
    }
    return amplitude * a * std::sin(a * theta) / std::sin(theta);
  }

  // A (sin(a t) + a t cos(a t)) / sin(t); limit 2 A a at t = 0.
  double d_xnu() const {
    const double a = order;
    if (theta < kSmallTheta) {
      const double t2 = theta * theta;
      return amplitude * (2.0 * a + a * t2 * (1.0 - 2.0 * a * a) / 3.0);
    }
    return amplitude * (std::sin(a * theta) + a * theta * std::cos(a * theta)) / std::sin(theta);
  }
};

// Locate the cell and weight of `v` in a sorted uniform-or-not axis.
std::pair<Index, double> bracket(const VectorXd& axis, double v) {
  const Index n = axis.size();
  if (n == 1) return {0, 0.0};
  auto it = std::upper_bound(axis.data(), axis.data() + n, v);
  Index hi = std::clamp<Index>(static_cast<Index>(it - axis.data()), 1, n - 1);
  Index lo = hi - 1;
  const double w = (v - axis[lo]) / (axis[hi] - axis[lo]);
  return {lo, std::clamp(w, 0.0, 1.0)};
}

double bilinear(const MatrixXd& table, const VectorXd& xs, const VectorXd& nus, double x,
                double nu) {
  const auto [i, wx] = bracket(xs, x);
  const auto [j, wn] = bracket(nus, nu);
  const Index i1 = std::min<Index>(i + 1, xs.size() - 1);
  const Index j1 = std::min<Index>(j + 1, nus.size() - 1);
  return (1 - wx) * (1 - wn) * table(i, j) + wx * (1 - wn) * table(i1, j) +
         (1 - wx) * wn * table(i, j1) + wx * wn * table(i1, j1);
}

}  // namespace

double BoundsVector::alpha() const { return std::max({beta, beta_x, beta_nu, beta_xnu}); }

double BoundsVector::alpha_nu() const { return std::max(beta, beta_nu); }

RecircFamily::RecircFamily(Kind kind, double nu_box, DerivativeEval eval, double fd_step)
    : kind_(std::move(kind)), nu_box_(nu_box), eval_(eval), fd_step_(fd_step) {
  if (!(nu_box >= 0.0) || !std::isfinite(nu_box)) throw DomainError("nu_box must be finite and >= 0");
  if (!(fd_step > 0.0)) throw DomainError("finite-difference step must be positive");
  if (const auto* t = std::get_if<Tabulated>(&kind_)) {
    const Index nx = t->xs.size();
    const Index nn = t->nus.size();
    if (nx < 2 || nn < 1) throw ShapeError("tabulated family needs >= 2 x points and >= 1 nu point");
    for (const MatrixXd* m : {&t->beta, &t->beta_x, &t->beta_nu, &t->beta_xnu}) {
      if (m->rows() != nx || m->cols() != nn) throw ShapeError("tabulated family: table shape mismatch");
    }
  }
}

void RecircFamily::check_domain(double x, double nu) const {
  if (std::isnan(x) || std::isnan(nu)) throw DomainError("NaN query");
  if (x < -kDomainSlack || x > 1.0 + kDomainSlack)
    throw DomainError("x=" + std::to_string(x) + " outside [0, 1]");
  if (std::abs(nu) > nu_box_ * (1.0 + kDomainSlack) + kDomainSlack)
    throw DomainError("nu=" + std::to_string(nu) + " outside [-" + std::to_string(nu_box_) + ", " +
                      std::to_string(nu_box_) + "]");
}

double RecircFamily::raw_beta(double x, double nu) const {
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Chebyshev>) {
          return ChebyshevEval(k, x, nu).value();
        } else if constexpr (std::is_same_v<K, Constant>) {
          return k.b;
        } else {
          return bilinear(k.beta, k.xs, k.nus, x, nu);
        }
      },
      kind_);
}

double RecircFamily::beta(double x, double nu) const {
  check_domain(x, nu);
  return raw_beta(x, nu);
}

Partials RecircFamily::analytic_partials(double x, double nu) const {
  return std::visit(
      [&](const auto& k) -> Partials {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Chebyshev>) {
          const ChebyshevEval e(k, x, nu);
          return {e.d_x(), e.d_nu(), e.d_xnu()};
        } else if constexpr (std::is_same_v<K, Constant>) {
          return {0.0, 0.0, 0.0};
        } else {
          return {bilinear(k.beta_x, k.xs, k.nus, x, nu), bilinear(k.beta_nu, k.xs, k.nus, x, nu),
                  bilinear(k.beta_xnu, k.xs, k.nus, x, nu)};
        }
      },
      kind_);
}

Partials RecircFamily::fd_partials(double x, double nu) const {
  const double h = fd_step_;
  // Stencil points clamped to the box; the divisor follows the clamping.
  const double xl = std::max(0.0, x - h);
  const double xr = std::min(1.0, x + h);
  const double nl = std::max(-nu_box_, nu - h);
  const double nr = std::min(nu_box_, nu + h);
  Partials p;
  p.x = (raw_beta(xr, nu) - raw_beta(xl, nu)) / (xr - xl);
  if (nr > nl) {
    p.nu = (raw_beta(x, nr) - raw_beta(x, nl)) / (nr - nl);
    p.xnu = (raw_beta(xr, nr) - raw_beta(xl, nr) - raw_beta(xr, nl) + raw_beta(xl, nl)) /
            ((xr - xl) * (nr - nl));
  }
  return p;
}

Partials RecircFamily::partials(double x, double nu) const {
  check_domain(x, nu);
  if (std::holds_alternative<Constant>(kind_)) return {};
  return eval_ == DerivativeEval::Analytic ? analytic_partials(x, nu) : fd_partials(x, nu);
}

VectorXd RecircFamily::sample(const VectorXd& xs, double nu) const {
  check_domain(0.0, nu);
  VectorXd out(xs.size());
  if (const auto* c = std::get_if<Chebyshev>(&kind_)) {
    // Vectorised closed form; this is on the control loop's hot path.
    for (Index i = 0; i < xs.size(); ++i) check_domain(xs[i], nu);
    out = c->amplitude * ((c->gamma + nu) * xs.array().min(1.0).max(-1.0).acos()).cos();
    return out;
  }
  for (Index i = 0; i < xs.size(); ++i) out[i] = beta(xs[i], nu);
  return out;
}

BetaSlices RecircFamily::sample_all(const VectorXd& xs, double nu) const {
  BetaSlices s;
  const Index n = xs.size();
  s.beta = sample(xs, nu);
  s.beta_x.resize(n);
  s.beta_nu.resize(n);
  s.beta_xnu.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Partials p = partials(xs[i], nu);
    s.beta_x[i] = p.x;
    s.beta_nu[i] = p.nu;
    s.beta_xnu[i] = p.xnu;
  }
  return s;
}

BoundsVector bounds_over_box(const RecircFamily& f, Index x_samples, Index nu_samples) {
  if (x_samples < 2 || nu_samples < 2) throw ShapeError("bounds_over_box needs >= 2 samples per axis");
  BoundsVector b;
  const double box = f.nu_box();
  for (Index j = 0; j < nu_samples; ++j) {
    const double nu = -box + 2.0 * box * static_cast<double>(j) / static_cast<double>(nu_samples - 1);
    for (Index i = 0; i < x_samples; ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(x_samples - 1);
      const Partials p = f.partials(x, nu);
      b.beta = std::max(b.beta, std::abs(f.beta(x, nu)));
      b.beta_x = std::max(b.beta_x, std::abs(p.x));
      b.beta_nu = std::max(b.beta_nu, std::abs(p.nu));
      b.beta_xnu = std::max(b.beta_xnu, std::abs(p.xnu));
    }
  }
  return b;
}

RecircFamily tabulate(const RecircFamily& f, Index x_points, Index nu_points) {
  if (x_points < 2 || nu_points < 2) throw ShapeError("tabulate needs >= 2 points per axis");
  Tabulated t;
  t.xs = VectorXd::LinSpaced(x_points, 0.0, 1.0);
  t.nus = VectorXd::LinSpaced(nu_points, -f.nu_box(), f.nu_box());
  t.beta.resize(x_points, nu_points);
  t.beta_x.resize(x_points, nu_points);
  t.beta_nu.resize(x_points, nu_points);
  t.beta_xnu.resize(x_points, nu_points);
  for (Index j = 0; j < nu_points; ++j) {
    for (Index i = 0; i < x_points; ++i) {
      const Partials p = f.partials(t.xs[i], t.nus[j]);
      t.beta(i, j) = f.beta(t.xs[i], t.nus[j]);
      t.beta_x(i, j) = p.x;
      t.beta_nu(i, j) = p.nu;
      t.beta_xnu(i, j) = p.xnu;
    }
  }
  return RecircFamily(std::move(t), f.nu_box());
}

}  // namespace gsno
