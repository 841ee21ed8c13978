#include "gsno/plant.hpp"

#include <cmath>

namespace gsno {

PlantState constant_state(const SpatialGrid& grid, double value) {
  return {grid, 0.0, VectorXd::Constant(grid.size(), value)};
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::Completed: return "Completed";
    case Termination::BlowUp: return "BlowUp";
    case Termination::DomainExit: return "DomainExit";
  }
  return "?";
}

void upwind_step(PlantState& s, double U_next, const RecircFamily& f, double dt,
                 double blowup_threshold) {
  const Index n = s.u.size();
  const double dx = s.grid.dx();
  if (dt > dx * (1.0 + 1e-12)) throw ShapeError("CFL violated: dt > dx");
  const double u0 = s.u[0];
  if (!std::isfinite(u0)) throw BlowUp(s.t, std::abs(u0));
  if (std::abs(u0) > f.nu_box()) throw DomainExit(s.t, u0);
  const double r = dt / dx;
  const VectorXd forcing = (dt * u0) * f.sample(s.grid.points().head(n - 1), u0);
  // Written as a convex combination so that r = 1 is an exact shift.
  VectorXd next = (1.0 - r) * s.u.head(n - 1) + r * s.u.tail(n - 1) + forcing;
  s.u.head(n - 1) = next;
  s.u[n - 1] = U_next;
  s.t += dt;
  const double m = s.u.cwiseAbs().maxCoeff();
  if (!(m <= blowup_threshold)) throw BlowUp(s.t, m);
}

Trajectory simulate(const VectorXd& u0, const SpatialGrid& grid, const RecircFamily& f,
                    const ControlLaw& law, const SimConfig& cfg) {
  if (u0.size() != grid.size()) throw ShapeError("initial state does not match grid");
  if (!(cfg.t_end > 0.0) || !(cfg.dt > 0.0)) throw ShapeError("t_end and dt must be positive");
  if (cfg.dt > grid.dx() * (1.0 + 1e-12)) throw ShapeError("CFL violated: dt > dx");
  if (cfg.record_stride < 1) throw ShapeError("record_stride must be >= 1");

  Trajectory tr;
  tr.dx = grid.dx();
  tr.dt = cfg.dt;
  PlantState s{grid, 0.0, u0};
  const auto steps = static_cast<long long>(std::llround(cfg.t_end / cfg.dt));
  auto record = [&](double U) {
    tr.samples.push_back({s.t, s.u[0], U, omega_norm(s.u, grid.dx())});
    if (cfg.keep_snapshots) tr.snapshots.push_back(s.u);
  };

  long long step = 0;
  try {
    for (; step < steps; ++step) {
      const double U = law(s);
      if (step % cfg.record_stride == 0) record(U);
      upwind_step(s, U, f, cfg.dt, cfg.blowup_threshold);
      // Keep time an exact multiple of dt rather than an accumulated sum.
      s.t = static_cast<double>(step + 1) * cfg.dt;
    }
    double U_last = s.u[grid.size() - 1];
    try {
      U_last = law(s);
    } catch (const Error&) {
    }
    record(U_last);
    tr.termination = Termination::Completed;
    tr.termination_time = s.t;
  } catch (const DomainExit& e) {
    tr.termination = Termination::DomainExit;
    tr.termination_time = s.t;
    tr.detail = e.what();
  } catch (const BlowUp& e) {
    tr.termination = Termination::BlowUp;
    tr.termination_time = s.t;
    tr.detail = e.what();
  }
  return tr;
}

double omega_norm(const VectorXd& u, double dx) {
  return u[0] * u[0] + l2_squared(u, dx) + l2_squared(grid_derivative(u, dx), dx);
}

double psi_norm(const VectorXd& w, double dx, PsiVariant v) {
  const double base = l2_squared(w, dx) + l2_squared(grid_derivative(w, dx), dx);
  return v == PsiVariant::WithBoundary ? base + w[0] * w[0] : base;
}

VectorXd transform(const VectorXd& u, const KernelSlice& k) {
  if (u.size() != k.values.size()) throw ShapeError("transform: grid mismatch");
  return u - convolve(k.values, u, k.grid.dx());
}

VectorXd inverse_transform(const VectorXd& w, const KernelSlice& l) {
  if (w.size() != l.values.size()) throw ShapeError("inverse_transform: grid mismatch");
  return w + convolve(l.values, w, l.grid.dx());
}

}  // namespace gsno
