#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "gsno/kernels.hpp"
#include "gsno/operator.hpp"
#include "gsno/plant.hpp"

namespace gsno {

/// k(., nu) on a uniform nu-grid, linearly interpolated in nu.
struct KernelTable {
  double nu_lo = 0.0;
  double nu_step = 0.0;
  MatrixXd slices;  // grid points x nu points

  Index nu_points() const { return slices.cols(); }
  double nu_hi() const { return nu_lo + nu_step * static_cast<double>(nu_points() - 1); }
  VectorXd lookup(double nu) const;
};

KernelTable build_kernel_table(const RecircFamily& f, const SpatialGrid& grid, double nu_step,
                               const VolterraConfig& cfg = {});

struct OpenLoop {};
/// Kernel frozen at nu = 0.
struct LinearLaw {
  VectorXd k0;
};
/// Kernel re-solved at nu = u(0, t) every step.
struct ExactGS {
  VolterraConfig cfg;
};
/// Kernel predicted by a neural operator at nu = u(0, t) every step.
struct NeuralGS {
  std::shared_ptr<const InferenceEngine> engine;
};
/// Kernel looked up in a precomputed nu-table.
struct TableGS {
  std::shared_ptr<const KernelTable> table;
};

using ControllerSpec = std::variant<OpenLoop, LinearLaw, ExactGS, NeuralGS, TableGS>;

const char* law_name(const ControllerSpec& spec);

LinearLaw make_linear(const RecircFamily& f, const SpatialGrid& grid, const VolterraConfig& cfg = {});
NeuralGS make_neural(const OperatorModel& model, const SpatialGrid& grid);
TableGS make_table(const RecircFamily& f, const SpatialGrid& grid, double nu_step = 1e-3,
                   const VolterraConfig& cfg = {});

/// The kernel slice k(., nu) a law uses; empty for OpenLoop.
VectorXd law_kernel(const ControllerSpec& spec, const RecircFamily& f, const SpatialGrid& grid, double nu);

/// U = int_0^1 k(1 - y) u(y) dy by the trapezoid rule on the plant grid.
double control_integral(const VectorXd& k, const VectorXd& u, double dx);

/// Boundary input for the current state. Gain-scheduled laws throw
/// DomainExit when u(0, t) leaves the family's box.
double compute_control(const ControllerSpec& spec, const PlantState& state, const RecircFamily& f);

struct TimingStats {
  std::size_t count = 0;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  double total = 0.0;
};

TimingStats timing_stats(std::vector<double> seconds);

struct ClosedLoopRun {
  std::string law;
  Trajectory trajectory;
  // Wall time spent producing the kernel slice, per control evaluation.
  TimingStats kernel_time;
  TimingStats integral_time;
};

ClosedLoopRun run_closed_loop(const VectorXd& u0, const SpatialGrid& grid, const RecircFamily& f,
                              const ControllerSpec& spec, const SimConfig& cfg);

/// Completed run whose final Omega is at most `tol`.
bool stabilized(const Trajectory& tr, double tol = 1e-3);

/// sup_{t > t_from} |Omega_a - Omega_b| / sup_{t > t_from} Omega_b over the
/// sample times both trajectories share. Infinite when a run stops before the
/// other.
double omega_discrepancy(const Trajectory& a, const Trajectory& b, double t_from = 1.0);

/// Exact and predicted kernels at every recorded u(0, t) of a trajectory.
struct KernelField {
  std::vector<double> t;
  std::vector<double> nu;
  MatrixXd exact;      // grid points x samples
  MatrixXd predicted;  // grid points x samples
  double max_abs_error = 0.0;
  double kernel_scale = 0.0;  // max |k|

  double relative_error() const { return kernel_scale > 0.0 ? max_abs_error / kernel_scale : 0.0; }
};

KernelField kernel_field(const Trajectory& tr, const RecircFamily& f, const InferenceEngine& engine,
                         const SpatialGrid& grid);

// ---------------------------------------------------------------------------
// Diagnostics

/// w = u - k*u with the given slice (exact k or a prediction) at nu = u(0).
VectorXd target_state(const VectorXd& u, const VectorXd& k, double dx);

enum class LyapunovVariant { FullKernel, GainOnly };

struct LyapunovSample {
  double t = 0.0;
  double V1 = 0.0;
  double V2 = 0.0;
  double V3 = 0.0;
  double V = 0.0;
};

/// FullKernel: V1 = 1/2 int e^{cx} w^2, V2 = 1/2 int e^{cx} w_x^2.
/// GainOnly: both integrals carry c/2 instead of 1/2 and V3 = w(0)^2 / 8.
LyapunovSample lyapunov_eval(const VectorXd& w, double dx, double c, LyapunovVariant variant);

struct SandwichReport {
  std::size_t samples = 0;
  // Smallest (rhs - lhs) / (1 + |rhs|) over both inequalities; >= 0 when all hold.
  double worst_slack = 0.0;
  bool holds = true;
};

/// FullKernel: Psi <= 2V <= e^c Psi with Psi = ||w||^2 + ||w_x||^2.
/// GainOnly: Psi <= 8V and V <= c e^c / 2 Psi with Psi including w(0)^2.
SandwichReport sandwich_check(const std::vector<VectorXd>& ws, double dx, double c, LyapunovVariant variant);

/// w(0)^2 <= 2 ||w|| ||w_x|| + 10 dx (1 + Psi).
bool agmon_holds(const VectorXd& w, double dx);

/// Bounds from the analysis, evaluated from sampled sup norms. `eps` is the
/// kernel approximation level the constants assume (0 for exact kernels).
struct TheoryConstants {
  double c = 1.0;
  double eps = 1.0;
  double k_bar = 0.0;
  double k_x_bar = 0.0;
  double l_bar = 0.0;
  double l_x_bar = 0.0;
  double delta = 0.0;  // Psi(w) <= delta Omega(u)
  double rho = 0.0;    // Omega(u) <= rho Psi(w)
  double k_nu_bar = 0.0;
  double k_xnu_bar = 0.0;
  double omega_bar = 0.0;
  double omega_x1_bar = 0.0;
  double omega_x2_bar = 0.0;
  double R1 = 0.0;
  double R2 = 0.0;
  double R3 = 0.0;
  double R0 = 0.0;
  double eps1 = 0.0;
  double eps2 = 0.0;
  double eps_star = 0.0;
  double Omega0 = 0.0;
};

TheoryConstants theory_constants(const BoundsVector& b, double nu_box, double c = 1.0, double eps = 1.0);

struct DiagnosticsReport {
  std::vector<LyapunovSample> lyapunov;  // FullKernel variant
  bool decay_holds = true;               // non-increasing for t > t_from
  double worst_increase = 0.0;           // largest V_{i+1} - V_i for t > t_from
  bool agmon = true;
  SandwichReport sandwich_full;
  SandwichReport sandwich_gain;
  double max_psi_over_omega = 0.0;
  double max_omega_over_psi = 0.0;
  bool norm_equivalence = true;
  bool w1_small = true;  // |w(1, t)| after the first transit, exact kernel
  double max_w1 = 0.0;
};

/// Diagnostics on the recorded snapshots of a trajectory using the exact
/// kernel at each sample's u(0, t).
DiagnosticsReport run_diagnostics(const Trajectory& tr, const RecircFamily& f, const TheoryConstants& tc,
                                  double c = 1.0, double t_from = 1.0);

}  // namespace gsno
