#include "gsno/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "gsno/io.hpp"

namespace gsno {

VectorXd KernelTable::lookup(double nu) const {
  if (nu_points() < 2) throw ShapeError("kernel table needs >= 2 nu points");
  const double pos = (nu - nu_lo) / nu_step;
  if (pos < -1e-9 || pos > static_cast<double>(nu_points() - 1) + 1e-9)
    throw DomainError("nu outside the kernel table");
  const Index j = std::clamp<Index>(static_cast<Index>(std::floor(pos)), 0, nu_points() - 2);
  const double w = std::clamp(pos - static_cast<double>(j), 0.0, 1.0);
  return (1.0 - w) * slices.col(j) + w * slices.col(j + 1);
}

KernelTable build_kernel_table(const RecircFamily& f, const SpatialGrid& grid, double nu_step,
                               const VolterraConfig& cfg) {
  if (!(nu_step > 0.0)) throw ShapeError("nu step must be positive");
  const double box = f.nu_box();
  const auto cells = static_cast<Index>(std::ceil(2.0 * box / nu_step - 1e-9));
  KernelTable t;
  t.nu_lo = -box;
  t.nu_step = cells > 0 ? 2.0 * box / static_cast<double>(cells) : 1.0;
  t.slices.resize(grid.size(), cells + 1);
  const VectorXd xs = grid.points();
  parallel_for(static_cast<std::size_t>(cells + 1), [&](std::size_t j) {
    const double nu = std::min(box, t.nu_lo + t.nu_step * static_cast<double>(j));
    t.slices.col(static_cast<Index>(j)) = solve_k(f.sample(xs, nu), grid, cfg, nu).values;
  });
  return t;
}

const char* law_name(const ControllerSpec& spec) {
  static constexpr const char* names[] = {"open-loop", "linear", "exact-gs", "neural-gs", "table-gs"};
  return names[spec.index()];
}

LinearLaw make_linear(const RecircFamily& f, const SpatialGrid& grid, const VolterraConfig& cfg) {
  return {solve_k(f.sample(grid.points(), 0.0), grid, cfg, 0.0).values};
}

NeuralGS make_neural(const OperatorModel& model, const SpatialGrid& grid) {
  return {std::make_shared<const InferenceEngine>(model, grid.points())};
}

TableGS make_table(const RecircFamily& f, const SpatialGrid& grid, double nu_step, const VolterraConfig& cfg) {
  return {std::make_shared<const KernelTable>(build_kernel_table(f, grid, nu_step, cfg))};
}

namespace {

void check_box(const RecircFamily& f, double t, double nu) {
  if (!(std::abs(nu) <= f.nu_box())) throw DomainExit(t, nu);
}

VectorXd kernel_for(const ControllerSpec& spec, const RecircFamily& f, const SpatialGrid& grid,
                    const VectorXd& xs, double nu) {
  return std::visit(
      [&](const auto& law) -> VectorXd {
        using L = std::decay_t<decltype(law)>;
        if constexpr (std::is_same_v<L, OpenLoop>) {
          return VectorXd();
        } else if constexpr (std::is_same_v<L, LinearLaw>) {
          if (law.k0.size() != grid.size()) throw ShapeError("linear law kernel does not match grid");
          return law.k0;
        } else if constexpr (std::is_same_v<L, ExactGS>) {
          return solve_k(f.sample(xs, nu), grid, law.cfg, nu).values;
        } else if constexpr (std::is_same_v<L, NeuralGS>) {
          if (law.engine->queries() != grid.size()) throw ShapeError("neural law query grid does not match plant");
          return law.engine->predict_k(f.sample(law.engine->sensor_xs(), nu));
        } else {
          VectorXd k = law.table->lookup(nu);
          if (k.size() != grid.size()) throw ShapeError("kernel table does not match grid");
          return k;
        }
      },
      spec);
}

bool scheduled(const ControllerSpec& spec) {
  return std::holds_alternative<ExactGS>(spec) || std::holds_alternative<NeuralGS>(spec) ||
         std::holds_alternative<TableGS>(spec);
}

}  // namespace

VectorXd law_kernel(const ControllerSpec& spec, const RecircFamily& f, const SpatialGrid& grid, double nu) {
  return kernel_for(spec, f, grid, grid.points(), nu);
}

double control_integral(const VectorXd& k, const VectorXd& u, double dx) {
  if (k.size() != u.size()) throw ShapeError("control integral: length mismatch");
  return trapezoid(k.reverse().cwiseProduct(u), dx);
}

double compute_control(const ControllerSpec& spec, const PlantState& s, const RecircFamily& f) {
  if (std::holds_alternative<OpenLoop>(spec)) return 0.0;
  const double nu = s.u[0];
  if (scheduled(spec)) check_box(f, s.t, nu);
  return control_integral(law_kernel(spec, f, s.grid, nu), s.u, s.grid.dx());
}

TimingStats timing_stats(std::vector<double> seconds) {
  TimingStats st;
  st.count = seconds.size();
  if (seconds.empty()) return st;
  std::sort(seconds.begin(), seconds.end());
  st.min = seconds.front();
  st.max = seconds.back();
  const std::size_t n = seconds.size();
  st.median = n % 2 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);
  for (double v : seconds) st.total += v;
  return st;
}

ClosedLoopRun run_closed_loop(const VectorXd& u0, const SpatialGrid& grid, const RecircFamily& f,
                              const ControllerSpec& spec, const SimConfig& cfg) {
  using clock = std::chrono::steady_clock;
  std::vector<double> kernel_s, integral_s;
  const VectorXd xs = grid.points();
  const bool open = std::holds_alternative<OpenLoop>(spec);
  const bool sched = scheduled(spec);
  ControlLaw law = [&](const PlantState& s) -> double {
    if (open) return 0.0;
    const double nu = s.u[0];
    if (sched) check_box(f, s.t, nu);
    const auto t0 = clock::now();
    const VectorXd k = kernel_for(spec, f, grid, xs, nu);
    const auto t1 = clock::now();
    const double U = control_integral(k, s.u, grid.dx());
    const auto t2 = clock::now();
    kernel_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    integral_s.push_back(std::chrono::duration<double>(t2 - t1).count());
    return U;
  };
  ClosedLoopRun run;
  run.law = law_name(spec);
  run.trajectory = simulate(u0, grid, f, law, cfg);
  run.kernel_time = timing_stats(std::move(kernel_s));
  run.integral_time = timing_stats(std::move(integral_s));
  return run;
}

bool stabilized(const Trajectory& tr, double tol) {
  return tr.termination == Termination::Completed && !tr.samples.empty() &&
         tr.samples.back().omega <= tol;
}

double omega_discrepancy(const Trajectory& a, const Trajectory& b, double t_from) {
  const std::size_t n = std::min(a.samples.size(), b.samples.size());
  if (a.samples.size() != b.samples.size()) return std::numeric_limits<double>::infinity();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(a.samples[i].t - b.samples[i].t) > 1e-9) throw ShapeError("trajectories sampled differently");
    if (a.samples[i].t <= t_from) continue;
    num = std::max(num, std::abs(a.samples[i].omega - b.samples[i].omega));
    den = std::max(den, b.samples[i].omega);
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

KernelField kernel_field(const Trajectory& tr, const RecircFamily& f, const InferenceEngine& engine,
                         const SpatialGrid& grid) {
  const VectorXd xs = grid.points();
  if (engine.queries() != xs.size()) throw ShapeError("kernel_field: engine grid mismatch");
  KernelField kf;
  for (const auto& s : tr.samples) {
    if (std::abs(s.u0) > f.nu_box()) continue;
    kf.t.push_back(s.t);
    kf.nu.push_back(s.u0);
  }
  const Index m = static_cast<Index>(kf.t.size());
  kf.exact.resize(xs.size(), m);
  kf.predicted.resize(xs.size(), m);
  for (Index j = 0; j < m; ++j) {
    const double nu = kf.nu[static_cast<std::size_t>(j)];
    kf.exact.col(j) = solve_k(f.sample(xs, nu), grid, {}, nu).values;
    kf.predicted.col(j) = engine.predict_k(f.sample(engine.sensor_xs(), nu));
  }
  if (m > 0) {
    kf.max_abs_error = (kf.exact - kf.predicted).cwiseAbs().maxCoeff();
    kf.kernel_scale = kf.exact.cwiseAbs().maxCoeff();
  }
  return kf;
}

// ---------------------------------------------------------------------------

VectorXd target_state(const VectorXd& u, const VectorXd& k, double dx) {
  if (u.size() != k.size()) throw ShapeError("target_state: grid mismatch");
  return u - convolve(k, u, dx);
}

LyapunovSample lyapunov_eval(const VectorXd& w, double dx, double c, LyapunovVariant variant) {
  const Index n = w.size();
  const VectorXd weight = (c * VectorXd::LinSpaced(n, 0.0, 1.0)).array().exp();
  const VectorXd wx = grid_derivative(w, dx);
  const double factor = variant == LyapunovVariant::FullKernel ? 0.5 : 0.5 * c;
  LyapunovSample s;
  s.V1 = factor * trapezoid(weight.cwiseProduct(w.cwiseAbs2()), dx);
  s.V2 = factor * trapezoid(weight.cwiseProduct(wx.cwiseAbs2()), dx);
  s.V3 = variant == LyapunovVariant::GainOnly ? w[0] * w[0] / 8.0 : 0.0;
  s.V = s.V1 + s.V2 + s.V3;
  return s;
}

SandwichReport sandwich_check(const std::vector<VectorXd>& ws, double dx, double c, LyapunovVariant variant) {
  SandwichReport rep;
  rep.worst_slack = std::numeric_limits<double>::infinity();
  auto note = [&](double lhs, double rhs) {
    const double slack = (rhs - lhs) / (1.0 + std::abs(rhs));
    rep.worst_slack = std::min(rep.worst_slack, slack);
    // Rounding allowance only: both bounds hold exactly for positive quadrature weights.
    if (lhs > rhs + 1e-12 * (1.0 + std::abs(rhs))) rep.holds = false;
  };
  for (const VectorXd& w : ws) {
    const LyapunovSample s = lyapunov_eval(w, dx, c, variant);
    if (variant == LyapunovVariant::FullKernel) {
      const double psi = psi_norm(w, dx, PsiVariant::NoBoundary);
      note(psi, 2.0 * s.V);
      note(2.0 * s.V, std::exp(c) * psi);
    } else {
      const double psi = psi_norm(w, dx, PsiVariant::WithBoundary);
      note(psi, 8.0 * s.V);
      note(s.V, 0.5 * c * std::exp(c) * psi);
    }
    ++rep.samples;
  }
  if (ws.empty()) rep.worst_slack = 0.0;
  return rep;
}

bool agmon_holds(const VectorXd& w, double dx) {
  const double n2 = l2_squared(w, dx);
  const double nx2 = l2_squared(grid_derivative(w, dx), dx);
  const double psi = n2 + nx2;
  return w[0] * w[0] <= 2.0 * std::sqrt(n2 * nx2) + 10.0 * dx * (1.0 + psi);
}

namespace {

double beta2(double V, double omega_bar, double B, double c) {
  const double ec = std::exp(c);
  const double inner = 1.0 + B + std::sqrt(2.0 * V) * omega_bar;
  return ec * omega_bar * omega_bar * V + ec * V * omega_bar * omega_bar * inner * inner;
}

}  // namespace

TheoryConstants theory_constants(const BoundsVector& b, double nu_box, double c, double eps) {
  TheoryConstants t;
  t.c = c;
  t.eps = eps;
  const double B = b.beta, Bx = b.beta_x;
  const double eB = std::exp(B);
  t.k_bar = eps + B * eB;
  t.k_x_bar = eps + Bx + B * B * eB + Bx * B * eB;
  const double dbar = eps * (1.0 + B);
  t.l_bar = (B + dbar) * std::exp(dbar);
  t.l_x_bar = t.k_x_bar + t.k_bar * t.l_bar + t.k_x_bar * t.l_bar;
  t.delta = 6.0 + 4.0 * t.k_bar * t.k_bar + 4.0 * t.k_x_bar * t.k_x_bar;
  t.rho = 7.0 + 4.0 * t.l_bar * t.l_bar + 4.0 * t.l_x_bar * t.l_x_bar;

  const double a = b.alpha();
  const double ea = std::exp(a);
  t.k_nu_bar = a * ea * (1.0 + a);
  t.k_xnu_bar = a * ea * (1.0 + 2.0 * a) + a * a * ea * (a + 1.0);
  // The Lyapunov-level constants are stated with eps = 1.
  const double l1 = (B + (1.0 + B)) * std::exp(1.0 + B);
  t.omega_bar = (t.k_nu_bar + 1.0) * (l1 + 1.0);
  t.omega_x1_bar = l1 * (t.k_nu_bar + 1.0) + (1.0 + l1) * (t.k_xnu_bar + 1.0);
  t.omega_x2_bar = t.k_nu_bar + 1.0;

  // beta2 is increasing in V; bracket and bisect beta2(R1) = 1/8.
  double lo = 0.0, hi = 1.0;
  while (beta2(hi, t.omega_bar, B, c) < 0.125) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (beta2(mid, t.omega_bar, B, c) < 0.125 ? lo : hi) = mid;
  }
  t.R1 = lo;

  const double ec = std::exp(c);
  const double O2 = t.omega_bar * t.omega_bar;
  const double Ox2 = t.omega_x1_bar * t.omega_x1_bar + t.omega_x2_bar * t.omega_x2_bar;
  const double inner = 1.0 + B + std::sqrt(2.0 * t.R1) * t.omega_bar;
  t.eps1 = std::min(1.0, 1.0 / std::sqrt(2.0 + 4.0 * ec * (1.0 + inner * inner)));
  t.R2 = std::min(t.R1, c / ec / (32.0 * O2));
  t.eps2 = std::min(t.eps1, std::sqrt((c / 2.0 - 8.0 * ec * O2 * t.R2) /
                                      (8.0 * O2 * ec * t.R2 + 4.0 * (1.0 + B) * (1.0 + B) * (ec - 1.0) / c)));
  t.R3 = std::min(t.R2, c / ec / (64.0 * Ox2));
  t.eps_star = std::min(t.eps2, 1.0 / (2.0 * (1.0 + B + Bx)) *
                                    std::sqrt((c * c / 2.0 - 16.0 * c * ec * Ox2 * t.R3) / (ec - 1.0)));
  t.R0 = std::min(t.R3, nu_box * nu_box / 2.0);
  const double psi0 = 2.0 / ec * t.R0;
  t.Omega0 = std::min(psi0 / t.delta, nu_box * nu_box);
  return t;
}

DiagnosticsReport run_diagnostics(const Trajectory& tr, const RecircFamily& f, const TheoryConstants& tc,
                                  double c, double t_from) {
  DiagnosticsReport rep;
  if (tr.snapshots.size() != tr.samples.size())
    throw ShapeError("diagnostics need a trajectory recorded with snapshots");
  if (tr.snapshots.empty()) return rep;
  const SpatialGrid grid(tr.snapshots.front().size());
  const double dx = grid.dx();
  const VectorXd xs = grid.points();
  std::vector<VectorXd> ws;
  ws.reserve(tr.snapshots.size());
  for (std::size_t i = 0; i < tr.snapshots.size(); ++i) {
    const VectorXd& u = tr.snapshots[i];
    const double nu = u[0];
    if (std::abs(nu) > f.nu_box()) continue;
    const VectorXd k = solve_k(f.sample(xs, nu), grid, {}, nu).values;
    VectorXd w = target_state(u, k, dx);
    LyapunovSample s = lyapunov_eval(w, dx, c, LyapunovVariant::FullKernel);
    s.t = tr.samples[i].t;
    rep.lyapunov.push_back(s);
    if (!agmon_holds(w, dx)) rep.agmon = false;

    const double psi = psi_norm(w, dx), omega = tr.samples[i].omega;
    if (omega > 0.0) rep.max_psi_over_omega = std::max(rep.max_psi_over_omega, psi / omega);
    if (psi > 0.0) rep.max_omega_over_psi = std::max(rep.max_omega_over_psi, omega / psi);
    if (s.t > t_from) {
      const double scale = std::max(1.0, u.cwiseAbs().maxCoeff());
      rep.max_w1 = std::max(rep.max_w1, std::abs(w[w.size() - 1]) / scale);
    }
    ws.push_back(std::move(w));
  }
  rep.norm_equivalence = rep.max_psi_over_omega <= 1.01 * tc.delta && rep.max_omega_over_psi <= 1.01 * tc.rho;
  rep.w1_small = rep.max_w1 <= 10.0 * dx;

  const double slack = 1e-3 * (rep.lyapunov.empty() ? 0.0 : rep.lyapunov.front().V);
  for (std::size_t i = 1; i < rep.lyapunov.size(); ++i) {
    if (rep.lyapunov[i - 1].t <= t_from) continue;
    const double inc = rep.lyapunov[i].V - rep.lyapunov[i - 1].V;
    rep.worst_increase = std::max(rep.worst_increase, inc);
    if (inc > slack) rep.decay_holds = false;
  }
  rep.sandwich_full = sandwich_check(ws, dx, c, LyapunovVariant::FullKernel);
  rep.sandwich_gain = sandwich_check(ws, dx, std::max(c, 1.0), LyapunovVariant::GainOnly);
  return rep;
}

}  // namespace gsno
