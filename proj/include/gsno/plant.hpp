#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gsno/kernels.hpp"
#include "gsno/recirc.hpp"

namespace gsno {

struct PlantState {
  SpatialGrid grid;
  double t = 0.0;
  VectorXd u;

  double u0() const { return u[0]; }
};

/// Constant initial profile u(x, 0) = value.
PlantState constant_state(const SpatialGrid& grid, double value);

struct SimConfig {
  double dt = 1e-4;
  double t_end = 5.0;
  double blowup_threshold = 1e6;
  // Record every `record_stride` steps (plus the initial and final state).
  Index record_stride = 100;
  bool keep_snapshots = false;
};

enum class Termination { Completed, BlowUp, DomainExit };

const char* termination_name(Termination t);

/// One recorded time: U is the boundary input applied over [t, t+dt).
struct TrajectorySample {
  double t = 0.0;
  double u0 = 0.0;
  double U = 0.0;
  double omega = 0.0;
};

struct Trajectory {
  double dx = 0.0;
  double dt = 0.0;
  std::vector<TrajectorySample> samples;
  // Full fields at the sample times when keep_snapshots is set.
  std::vector<VectorXd> snapshots;
  Termination termination = Termination::Completed;
  double termination_time = 0.0;
  std::string detail;
};

using ControlLaw = std::function<double(const PlantState&)>;

/// One explicit upwind step with the scheduling variable u(0, t) frozen and
/// the boundary value written after the interior update.
void upwind_step(PlantState& state, double U_next, const RecircFamily& f, double dt,
                 double blowup_threshold = 1e6);

Trajectory simulate(const VectorXd& u0, const SpatialGrid& grid, const RecircFamily& f,
                    const ControlLaw& law, const SimConfig& cfg);

/// u(0)^2 + ||u||^2 + ||u_x||^2.
double omega_norm(const VectorXd& u, double dx);

enum class PsiVariant { NoBoundary, WithBoundary };

/// ||w||^2 + ||w_x||^2, plus w(0)^2 for WithBoundary.
double psi_norm(const VectorXd& w, double dx, PsiVariant v = PsiVariant::NoBoundary);

/// w = u - k*u.
VectorXd transform(const VectorXd& u, const KernelSlice& k);

/// u = w + l*w.
VectorXd inverse_transform(const VectorXd& w, const KernelSlice& l);

}  // namespace gsno
