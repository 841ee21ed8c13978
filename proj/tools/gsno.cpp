// gsno: dataset generation, training, simulation presets, benchmarks, kernel
// dumps and the property-verification suite.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsno/bench.hpp"
#include "gsno/control.hpp"
#include "gsno/formats.hpp"
#include "gsno/io.hpp"
#include "gsno/kernels.hpp"
#include "gsno/operator.hpp"
#include "gsno/plant.hpp"
#include "gsno/recirc.hpp"

using namespace gsno;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

// Write to a sibling temp file, then rename over the target.
void replace_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Scenarios and presets

struct Scenario {
  double gamma;
  double u0;
};

struct Preset {
  std::string name;
  std::string law;
  std::vector<Scenario> scenarios;
  double t_end;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> p{
      {"fig1-open-loop", "open", {{3, 0.38}, {5, 0.04}}, 10.0},
      {"fig2-roa", "exact-gs", {{3, 0.37}, {3, 0.39}, {5, 0.03}, {5, 0.05}}, 5.0},
      {"fig3-linear", "linear", {{3, 0.38}, {5, 0.04}}, 5.0},
      {"fig4-kernels", "neural-gs", {{3, 0.38}, {5, 0.04}}, 5.0},
      {"fig5-neural-gs", "neural-gs", {{3, 0.38}, {5, 0.04}}, 5.0},
      {"table1-bench", "", {{3, 0.0}}, 0.0},
  };
  return p;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw UsageError("unknown preset '" + name + "'");
}

std::shared_ptr<const OperatorModel> require_model(const std::string& path, const std::string& why) {
  if (path.empty()) throw UsageError(why + " needs --model");
  return std::make_shared<const OperatorModel>(load_model(path));
}

ControllerSpec make_law(const std::string& law, const RecircFamily& f, const SpatialGrid& grid,
                        const std::shared_ptr<const OperatorModel>& model, double table_step) {
  if (law == "open") return OpenLoop{};
  if (law == "linear") return make_linear(f, grid);
  if (law == "exact-gs") return ExactGS{};
  if (law == "neural-gs") {
    if (!model) throw UsageError("--law neural-gs needs --model");
    return make_neural(*model, grid);
  }
  if (law == "table-gs") return make_table(f, grid, table_step);
  throw UsageError("unknown law '" + law + "'");
}

std::string scenario_tag(const std::string& law, const Scenario& s) {
  return law + "_g" + fmt(s.gamma) + "_u" + fmt(s.u0);
}

// ---------------------------------------------------------------------------
// gen-dataset

struct GenArgs {
  DatasetSpec spec;
  std::string out;
};

int cmd_gen_dataset(const GenArgs& a) {
  const auto& s = a.spec;
  if (s.n_gamma < 1 || s.n_nu < 1) throw UsageError("--n-gamma and --n-nu must be positive");
  if (!(s.gamma_lo <= s.gamma_hi) || !(s.nu_lo <= s.nu_hi)) throw UsageError("empty sampling range");
  if (s.sensors < 2 || s.queries < 5) throw UsageError("need >= 2 sensors and >= 5 queries");
  if (!(s.train_fraction > 0.0 && s.train_fraction <= 1.0)) throw UsageError("--train-fraction must be in (0, 1]");
  const Dataset ds = gen_dataset(s);
  save_dataset(ds, a.out);
  std::cout << "records " << ds.size() << " dropped " << ds.dropped << " train " << ds.train.size() << " test "
            << ds.test.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string metrics;
  std::string variant = "k-only";
  std::string loss = "mse";
  std::string precision = "single";
  bool constant_lr = false;
  TrainConfig cfg;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.cfg;
  Targets targets;
  try {
    targets = parse_targets(a.variant);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.loss == "mse") cfg.loss = LossKind::MSE;
  else if (a.loss == "deriv-penalty") cfg.loss = LossKind::DerivativePenalty;
  else throw UsageError("--loss must be mse or deriv-penalty");
  if (a.precision == "single") cfg.precision = Precision::Single;
  else if (a.precision == "double") cfg.precision = Precision::Double;
  else throw UsageError("--precision must be single or double");
  cfg.cosine_schedule = !a.constant_lr;
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) throw UsageError("bad training budget");

  const Dataset ds = load_dataset(a.dataset);
  std::ofstream metrics;
  if (!a.metrics.empty()) {
    metrics.open(a.metrics, std::ios::binary | std::ios::trunc);
    if (!metrics) throw Error("cannot open " + a.metrics);
    metrics << "epoch,train_loss,train_rel_l2,test_rel_l2,test_rms\n";
  }
  auto on_epoch = [&](const OperatorModel& model, const EpochStats& st) {
    replace_file(a.out, encode_model(model));
    if (metrics) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%ld,%.9e,%.9e,%.9e,%.9e\n", static_cast<long>(st.epoch), st.train_loss,
                    st.train_rel_l2, st.test_rel_l2, st.test_rms);
      metrics << buf << std::flush;
    }
    std::fprintf(stderr, "epoch %ld loss %.3e train %.3e test %.3e (%.1fs)\n", static_cast<long>(st.epoch),
                 st.train_loss, st.train_rel_l2, st.test_rel_l2, st.seconds);
  };
  try {
    const TrainResult res = train(ds, ModelShape::reference(), targets, cfg, on_epoch);
    replace_file(a.out, encode_model(res.model));
    const auto& last = res.history.back();
    std::cout << "params " << res.model.parameter_count() << " final test_rel_l2 " << last.test_rel_l2 << "\n";
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "; last good checkpoint kept at " << a.out << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimArgs {
  std::string preset;
  std::string law = "exact-gs";
  std::optional<double> gamma;
  std::optional<double> u0;
  double amplitude = 5.0;
  double nu_box = 5.0;
  std::string model;
  double dt = 1e-4;
  double dx = 1e-2;
  std::optional<double> t_end;
  Index stride = 100;
  double table_step = 1e-3;
  bool snapshots = false;
  std::string out = "run_";
  bool law_set = false;
};

// Finest grid for which simulate evaluates Lyapunov diagnostics.
constexpr Index kDiagnosticsMaxPoints = 2001;

struct RunOutcome {
  ClosedLoopRun run;
  Scenario scenario;
  RecircFamily family;
};

RunOutcome run_one(const SimArgs& a, const std::string& law, const Scenario& sc, double t_end,
                   const std::shared_ptr<const OperatorModel>& model, bool snapshots) {
  const RecircFamily f = RecircFamily::chebyshev(a.amplitude, sc.gamma, a.nu_box);
  const SpatialGrid grid = SpatialGrid::with_step(a.dx);
  const ControllerSpec spec = make_law(law, f, grid, model, a.table_step);
  SimConfig cfg;
  cfg.dt = a.dt;
  cfg.t_end = t_end;
  cfg.record_stride = a.stride;
  // Snapshots also feed the Lyapunov verdict in the summary.
  cfg.keep_snapshots = snapshots || grid.size() <= kDiagnosticsMaxPoints;
  RunOutcome o{run_closed_loop(constant_state(grid, sc.u0).u, grid, f, spec, cfg), sc, f};
  return o;
}

void emit_run(const SimArgs& a, const std::string& preset, const RunOutcome& o) {
  const std::string tag = a.out + scenario_tag(o.run.law, o.scenario);
  write_text(tag + ".csv", trajectory_csv(o.run.trajectory));
  std::optional<DiagnosticsReport> diag;
  const auto& snaps = o.run.trajectory.snapshots;
  if (!snaps.empty() && snaps.front().size() <= kDiagnosticsMaxPoints) {
    try {
      const TheoryConstants tc = theory_constants(bounds_over_box(o.family, 101, 101), o.family.nu_box(), 1.0, 0.0);
      diag = run_diagnostics(o.run.trajectory, o.family, tc);
    } catch (const Error& e) {
      std::cerr << tag << ": no Lyapunov verdict: " << e.what() << "\n";
    }
  }
  write_text(tag + ".json", run_summary_json({preset, o.scenario.gamma, o.scenario.u0, a.amplitude}, o.run, 1e-3,
                                             diag ? &*diag : nullptr));
  if (a.snapshots) write_file(tag + ".snap", encode_snapshots(snapshots_of(o.run.trajectory)));
  const auto& tr = o.run.trajectory;
  std::cout << tag << ": " << termination_name(tr.termination) << " final_omega "
            << (tr.samples.empty() ? 0.0 : tr.samples.back().omega) << "\n";
}

int cmd_simulate(const SimArgs& a) {
  if (!(a.dt > 0.0) || !(a.dx > 0.0) || a.dt > a.dx) throw UsageError("need 0 < dt <= dx");
  if (a.stride < 1) throw UsageError("--stride must be positive");
  std::shared_ptr<const OperatorModel> model;
  if (!a.model.empty()) model = require_model(a.model, "");

  if (a.preset.empty()) {
    if (!a.gamma || !a.u0) throw UsageError("without --preset, --gamma and --u0 are required");
    const Scenario sc{*a.gamma, *a.u0};
    emit_run(a, "custom", run_one(a, a.law, sc, a.t_end.value_or(5.0), model, a.snapshots));
    return kExitOk;
  }

  const Preset& p = find_preset(a.preset);
  std::vector<Scenario> scs;
  for (const auto& s : p.scenarios)
    if (!a.gamma || s.gamma == *a.gamma) scs.push_back(a.u0 ? Scenario{s.gamma, *a.u0} : s);
  if (scs.empty()) throw UsageError("preset " + p.name + " has no scenario with that gamma");
  const double t_end = a.t_end.value_or(p.t_end);

  if (p.name == "table1-bench") {
    model = require_model(a.model, p.name);
    const RecircFamily f = RecircFamily::chebyshev(a.amplitude, scs.front().gamma, a.nu_box);
    const auto rows = bench_kernel(f, 0.0, *model);
    write_text(a.out + "bench.csv", bench_csv(rows));
    std::cout << bench_csv(rows);
    return kExitOk;
  }
  if (p.name == "fig4-kernels") {
    model = require_model(a.model, p.name);
    for (const auto& sc : scs) {
      const RunOutcome o = run_one(a, "neural-gs", sc, t_end, model, a.snapshots);
      emit_run(a, p.name, o);
      const RecircFamily f = RecircFamily::chebyshev(a.amplitude, sc.gamma, a.nu_box);
      const SpatialGrid grid = SpatialGrid::with_step(a.dx);
      const InferenceEngine engine(*model, grid.points());
      const KernelField kf = kernel_field(o.run.trajectory, f, engine, grid);
      std::ostringstream os;
      os << "t,nu,x,k_exact,k_neural,diff\n";
      const VectorXd xs = grid.points();
      char buf[200];
      for (std::size_t j = 0; j < kf.t.size(); ++j)
        for (Index i = 0; i < xs.size(); ++i) {
          const auto c = static_cast<Index>(j);
          std::snprintf(buf, sizeof(buf), "%.10g,%.17g,%.10g,%.17g,%.17g,%.17g\n", kf.t[j], kf.nu[j], xs[i],
                        kf.exact(i, c), kf.predicted(i, c), kf.exact(i, c) - kf.predicted(i, c));
          os << buf;
        }
      const std::string tag = a.out + "kernels_g" + fmt(sc.gamma) + "_u" + fmt(sc.u0);
      write_text(tag + ".csv", os.str());
      json j{{"scenario", p.name},          {"gamma", sc.gamma},
             {"u0", sc.u0},                 {"samples", kf.t.size()},
             {"max_abs_error", kf.max_abs_error}, {"kernel_scale", kf.kernel_scale},
             {"relative_error", kf.relative_error()}};
      write_text(tag + ".json", j.dump(2) + "\n");
      std::cout << tag << ": max |k - k_hat| / max |k| = " << kf.relative_error() << "\n";
    }
    return kExitOk;
  }
  if (p.name == "fig5-neural-gs") {
    model = require_model(a.model, p.name);
    for (const auto& sc : scs) {
      const RunOutcome neural = run_one(a, "neural-gs", sc, t_end, model, a.snapshots);
      const RunOutcome exact = run_one(a, "exact-gs", sc, t_end, model, a.snapshots);
      emit_run(a, p.name, neural);
      emit_run(a, p.name, exact);
      const double d = omega_discrepancy(neural.run.trajectory, exact.run.trajectory, 1.0);
      std::cout << "  omega discrepancy after t=1: " << d << "\n";
    }
    return kExitOk;
  }
  const std::string law = a.law_set ? a.law : p.law;
  for (const auto& sc : scs) emit_run(a, p.name, run_one(a, law, sc, t_end, model, a.snapshots));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string model;
  std::vector<double> dx_list{1e-2, 1e-3, 5e-4, 1e-4};
  Index reps = 11;
  Index warmup = 3;
  double gamma = 3.0;
  double nu = 0.0;
  double amplitude = 5.0;
  std::string out;
  bool check = false;
  double min_speedup = 100.0;
};

int cmd_bench(const BenchArgs& a) {
  if (a.reps < 1 || a.warmup < 0) throw UsageError("--reps must be >= 1 and --warmup >= 0");
  for (double dx : a.dx_list)
    if (!(dx > 0.0 && dx <= 0.5)) throw UsageError("--dx-list entries must be in (0, 0.5]");
  const auto model = require_model(a.model, "bench");
  const RecircFamily f = RecircFamily::chebyshev(a.amplitude, a.gamma);
  BenchConfig cfg;
  cfg.dx_list = a.dx_list;
  cfg.repetitions = a.reps;
  cfg.warmup = a.warmup;
  const auto rows = bench_kernel(f, a.nu, *model, cfg);
  const std::string csv = bench_csv(rows);
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  if (!a.check) return kExitOk;
  const BenchCheck c = check_bench(rows, a.min_speedup);
  std::cerr << "exact slope " << c.exact_slope << ", inference slope " << c.neural_slope << ", final speedup "
            << c.final_speedup << "\n";
  for (const auto& msg : c.failures) std::cerr << "check failed: " << msg << "\n";
  return c.ok() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// kernel

struct KernelArgs {
  std::string family = "chebyshev";
  double amplitude = 5.0;
  double gamma = 3.0;
  double b = 1.0;
  std::vector<double> nus;
  std::vector<double> nu_range;  // lo hi count
  Index n = 101;
  std::string source = "exact";
  std::string diff;
  std::string model;
  bool bundle = false;
  std::string out;
};

int cmd_kernel(const KernelArgs& a) {
  if (a.n < 2) throw UsageError("--n must be >= 2");
  RecircFamily f = a.family == "constant"    ? RecircFamily::constant(a.b)
                   : a.family == "chebyshev" ? RecircFamily::chebyshev(a.amplitude, a.gamma)
                                             : throw UsageError("--family must be chebyshev or constant");
  std::vector<double> nus = a.nus;
  if (!a.nu_range.empty()) {
    if (a.nu_range.size() != 3 || a.nu_range[2] < 1) throw UsageError("--nu-range takes LO HI COUNT");
    const auto cnt = static_cast<Index>(a.nu_range[2]);
    const VectorXd v = VectorXd::LinSpaced(cnt, a.nu_range[0], a.nu_range[1]);
    nus.insert(nus.end(), v.data(), v.data() + v.size());
  }
  if (nus.empty()) nus.push_back(0.0);
  for (const auto& s : {a.source, a.diff})
    if (!s.empty() && s != "exact" && s != "neural") throw UsageError("sources are exact or neural");
  if (a.bundle && (a.source != "exact" || !a.diff.empty())) throw UsageError("--bundle dumps the exact source only");

  const SpatialGrid grid(a.n);
  const VectorXd xs = grid.points();
  std::unique_ptr<InferenceEngine> engine;
  if (a.source == "neural" || a.diff == "neural")
    engine = std::make_unique<InferenceEngine>(*require_model(a.model, "neural kernels"), xs);
  auto slice = [&](const std::string& src, double nu) -> VectorXd {
    if (src == "exact") return solve_k(f.sample(xs, nu), grid, {}, nu).values;
    return engine->predict_k(f.sample(engine->sensor_xs(), nu));
  };

  std::ostringstream os;
  if (a.bundle) os << "nu,x,k,k_nu,k_x,k_xnu,l\n";
  else if (a.diff.empty()) os << "nu,x,k\n";
  else os << "nu,x,k,k_ref,diff\n";
  double max_diff = 0.0, scale = 0.0;
  char buf[256];
  for (double nu : nus) {
    if (a.bundle) {
      const KernelBundle kb = solve_bundle(f, nu, grid, {}, BundleTargets::Full);
      for (Index i = 0; i < grid.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", nu, xs[i], kb.k.values[i],
                      kb.k_nu->values[i], kb.k_x->values[i], kb.k_xnu->values[i], kb.l.values[i]);
        os << buf;
      }
      continue;
    }
    const VectorXd k = slice(a.source, nu);
    if (a.diff.empty()) {
      for (Index i = 0; i < grid.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", nu, xs[i], k[i]);
        os << buf;
      }
      continue;
    }
    const VectorXd r = slice(a.diff, nu);
    const VectorXd d = k - r;
    max_diff = std::max(max_diff, d.cwiseAbs().maxCoeff());
    scale = std::max(scale, r.cwiseAbs().maxCoeff());
    for (Index i = 0; i < grid.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", nu, xs[i], k[i], r[i], d[i]);
      os << buf;
    }
  }
  if (a.out.empty()) std::cout << os.str();
  else write_text(a.out, os.str());
  if (!a.diff.empty())
    std::cerr << "max |diff| " << max_diff << " (" << (scale > 0 ? max_diff / scale : 0.0) << " of max |k_ref|)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct SuiteResult {
  std::string id;
  std::string status;  // PASS, FAIL, SKIPPED
  std::string detail;
  json metrics = json::object();
  double seconds = 0.0;
};

template <typename Fn>
SuiteResult run_suite(const std::string& id, Fn&& fn) {
  SuiteResult r;
  r.id = id;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const bool ok = fn(r);
    r.status = ok ? "PASS" : "FAIL";
  } catch (const std::exception& e) {
    r.status = "FAIL";
    r.detail = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

SuiteResult skipped(const std::string& id, const std::string& why) {
  SuiteResult r;
  r.id = id;
  r.status = "SKIPPED";
  r.detail = why;
  return r;
}

VectorXd smooth_state(const VectorXd& xs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  VectorXd u = VectorXd::Constant(xs.size(), U(rng));
  for (int m = 1; m <= 4; ++m) {
    const double a = U(rng) / m, b = U(rng) / m;
    u.array() += a * (M_PI * m * xs.array()).sin() + b * (M_PI * m * xs.array()).cos();
  }
  return u;
}

struct VerifyArgs {
  std::string model;
  std::string out;
};

int cmd_verify(const VerifyArgs& a) {
  std::vector<SuiteResult> res;

  res.push_back(run_suite("recirc.bounds", [](SuiteResult& r) {
    const BoundsVector c = bounds_over_box(RecircFamily::constant(1.0), 11, 11);
    const BoundsVector ch = bounds_over_box(RecircFamily::chebyshev(5.0, 3.0), 101, 101);
    r.metrics = {{"constant", {c.beta, c.beta_x, c.beta_nu, c.beta_xnu}}, {"chebyshev_beta", ch.beta}};
    return c.beta == 1.0 && c.beta_x == 0.0 && c.beta_nu == 0.0 && c.beta_xnu == 0.0 && ch.beta <= 5.0;
  }));

  res.push_back(run_suite("kernels.closed_form", [](SuiteResult& r) {
    const SpatialGrid g(1001);
    const VectorXd k = solve_k(VectorXd::Ones(g.size()), g).values;
    const double err = (k + g.points().array().exp().matrix()).cwiseAbs().maxCoeff();
    r.metrics = {{"max_error", err}};
    return err <= 1e-5;
  }));

  res.push_back(run_suite("kernels.growth_bounds", [](SuiteResult& r) {
    const SpatialGrid g(101);
    const VectorXd nus = VectorXd::LinSpaced(41, -5.0, 5.0);
    KernelBoundRatios worst;
    for (int gamma = 3; gamma <= 8; ++gamma) {
      const RecircFamily f = RecircFamily::chebyshev(5.0, gamma);
      const KernelBoundRatios q = kernel_bound_ratios(f, bounds_over_box(f, 201, 201), nus, g);
      worst.k = std::max(worst.k, q.k);
      worst.k_nu = std::max(worst.k_nu, q.k_nu);
      worst.k_xnu = std::max(worst.k_xnu, q.k_xnu);
      worst.l = std::max(worst.l, q.l);
      worst.points += q.points;
    }
    r.metrics = {{"k", worst.k}, {"k_nu", worst.k_nu}, {"k_xnu", worst.k_xnu}, {"l", worst.l},
                 {"points", worst.points}};
    return worst.holds(0.01);
  }));

  res.push_back(run_suite("plant.roundtrip", [](SuiteResult& r) {
    const SpatialGrid g(1001);
    const VectorXd xs = g.points();
    const RecircFamily f = RecircFamily::chebyshev(5.0, 3.0);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> N(-5.0, 5.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const VectorXd u = smooth_state(xs, rng);
      const KernelBundle kb = solve_bundle(f, N(rng), g, {}, BundleTargets::KOnly);
      const VectorXd back = inverse_transform(transform(u, kb.k), kb.l);
      worst = std::max(worst, (back - u).cwiseAbs().maxCoeff() / (1.0 + u.cwiseAbs().maxCoeff()));
    }
    r.metrics = {{"worst_relative_error", worst}};
    return worst <= 1e-6;
  }));

  res.push_back(run_suite("control.lyapunov", [](SuiteResult& r) {
    const RecircFamily f = RecircFamily::chebyshev(5.0, 3.0);
    const SpatialGrid g(101);
    SimConfig cfg;
    cfg.keep_snapshots = true;
    const ClosedLoopRun run = run_closed_loop(constant_state(g, 0.37).u, g, f, ExactGS{}, cfg);
    const TheoryConstants tc = theory_constants(bounds_over_box(f, 101, 101), f.nu_box(), 1.0, 0.0);
    const DiagnosticsReport d = run_diagnostics(run.trajectory, f, tc);
    r.metrics = {{"termination", termination_name(run.trajectory.termination)},
                 {"decay", d.decay_holds},
                 {"worst_increase", d.worst_increase},
                 {"agmon", d.agmon},
                 {"sandwich_full_slack", d.sandwich_full.worst_slack},
                 {"sandwich_gain_slack", d.sandwich_gain.worst_slack},
                 {"norm_equivalence", d.norm_equivalence}};
    return stabilized(run.trajectory) && d.decay_holds && d.agmon && d.sandwich_full.holds &&
           d.sandwich_gain.holds && d.norm_equivalence;
  }));

  const std::vector<std::string> neural_ids{"operator.load", "operator.kernel_field", "control.neural_gs"};
  if (a.model.empty()) {
    for (const auto& id : neural_ids) res.push_back(skipped(id, "no --model given"));
  } else {
    std::shared_ptr<const OperatorModel> model;
    res.push_back(run_suite("operator.load", [&](SuiteResult& r) {
      model = std::make_shared<const OperatorModel>(load_model(a.model));
      r.metrics = {{"parameters", model->parameter_count()}, {"targets", targets_name(model->targets)}};
      return true;
    }));
    if (!model) {
      for (std::size_t i = 1; i < neural_ids.size(); ++i) {
        SuiteResult s = res.back();
        s.id = neural_ids[i];
        s.seconds = 0.0;
        res.push_back(s);
      }
    } else {
      const SpatialGrid g(101);
      const std::vector<Scenario> scs{{3, 0.37}, {5, 0.03}};
      res.push_back(run_suite("operator.kernel_field", [&](SuiteResult& r) {
        double worst = 0.0;
        for (const auto& sc : scs) {
          const RecircFamily f = RecircFamily::chebyshev(5.0, sc.gamma);
          const ClosedLoopRun run = run_closed_loop(constant_state(g, sc.u0).u, g, f, make_neural(*model, g), {});
          const InferenceEngine engine(*model, g.points());
          worst = std::max(worst, kernel_field(run.trajectory, f, engine, g).relative_error());
        }
        r.metrics = {{"worst_relative_error", worst}};
        return worst <= 0.2;
      }));
      res.push_back(run_suite("control.neural_gs", [&](SuiteResult& r) {
        bool ok = true;
        json runs = json::array();
        for (const auto& sc : scs) {
          const RecircFamily f = RecircFamily::chebyshev(5.0, sc.gamma);
          const VectorXd u0 = constant_state(g, sc.u0).u;
          const ClosedLoopRun nn = run_closed_loop(u0, g, f, make_neural(*model, g), {});
          const ClosedLoopRun ex = run_closed_loop(u0, g, f, ExactGS{}, {});
          const double d = omega_discrepancy(nn.trajectory, ex.trajectory, 1.0);
          const bool st = stabilized(nn.trajectory, 1e-2);
          runs.push_back({{"gamma", sc.gamma}, {"u0", sc.u0}, {"stabilized", st}, {"omega_discrepancy", d}});
          ok = ok && st && d <= 0.1;
        }
        r.metrics = {{"runs", runs}};
        return ok;
      }));
    }
  }

  bool all = true;
  json j;
  json suites = json::array();
  for (const auto& r : res) {
    all = all && r.status != "FAIL";
    json s{{"id", r.id}, {"status", r.status}, {"seconds", r.seconds}};
    if (!r.detail.empty()) s["detail"] = r.detail;
    if (!r.metrics.empty()) s["metrics"] = r.metrics;
    suites.push_back(s);
    std::cerr << r.status << " " << r.id << (r.detail.empty() ? "" : ": " + r.detail) << "\n";
  }
  j["passed"] = all;
  j["suites"] = suites;
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) std::cout << text;
  else write_text(a.out, text);
  return all ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// key=value config files

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Splice `--key value` for every config entry whose flag is not already on
// the command line.
void expand_config(CLI::App& app, std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.size() < 2) return;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return;
  }
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::vector<std::string> extra;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    const std::string flag = "--" + key;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (!opt || key == "config") throw UsageError(path + ": unknown key '" + key + "' for " + args[1]);
    if (given(args, flag)) continue;
    if (opt->get_expected_max() == 0) {
      if (value == "true" || value == "1" || value == "on" || value == "yes") extra.push_back(flag);
      else if (!(value == "false" || value == "0" || value == "off" || value == "no"))
        throw UsageError(path + ": '" + key + "' expects true or false");
      continue;
    }
    extra.push_back(flag);
    std::istringstream vs(value);
    std::string tok;
    bool any = false;
    while (vs >> tok) {
      std::istringstream ts(tok);
      std::string part;
      while (std::getline(ts, part, ','))
        if (!part.empty()) {
          extra.push_back(part);
          any = true;
        }
    }
    if (!any) extra.push_back(value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gain-scheduled backstepping with neural-operator kernels"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gsno 1.0");

  std::string config_path;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen-dataset", "Sample the Chebyshev family and solve kernels");
  g->add_option("--out,-o", gen.out, "Dataset file")->required();
  g->add_option("--n-gamma", gen.spec.n_gamma, "Number of gamma draws")->capture_default_str();
  g->add_option("--n-nu", gen.spec.n_nu, "nu draws per gamma")->capture_default_str();
  g->add_option("--gamma-lo", gen.spec.gamma_lo)->capture_default_str();
  g->add_option("--gamma-hi", gen.spec.gamma_hi)->capture_default_str();
  g->add_option("--nu-lo", gen.spec.nu_lo)->capture_default_str();
  g->add_option("--nu-hi", gen.spec.nu_hi)->capture_default_str();
  g->add_option("--amplitude", gen.spec.amplitude)->capture_default_str();
  g->add_option("--sensors", gen.spec.sensors, "Branch sensor count")->capture_default_str();
  g->add_option("--queries", gen.spec.queries, "Query grid size")->capture_default_str();
  g->add_option("--seed", gen.spec.seed)->capture_default_str();
  g->add_option("--train-fraction", gen.spec.train_fraction)->capture_default_str();
  with_config(g);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a DeepONet kernel operator");
  t->add_option("--dataset,-d", tr.dataset)->required()->check(CLI::ExistingFile);
  t->add_option("--out,-o", tr.out, "Model file (rewritten after every epoch)")->required();
  t->add_option("--metrics", tr.metrics, "Per-epoch CSV");
  t->add_option("--variant", tr.variant, "k-only | gain-only | full")->capture_default_str();
  t->add_option("--loss", tr.loss, "mse | deriv-penalty")->capture_default_str();
  t->add_option("--penalty-weight", tr.cfg.penalty_weight)->capture_default_str();
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  t->add_option("--lr-floor", tr.cfg.lr_floor)->capture_default_str();
  t->add_flag("--constant-lr", tr.constant_lr, "Disable cosine decay");
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--precision", tr.precision, "single | double")->capture_default_str();
  with_config(t);

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "Run the plant under a control law");
  std::vector<std::string> preset_names;
  for (const auto& p : presets()) preset_names.push_back(p.name);
  s->add_option("--preset", sim.preset)->check(CLI::IsMember(preset_names));
  auto* law_opt = s->add_option("--law", sim.law, "open | linear | exact-gs | neural-gs | table-gs")
                      ->check(CLI::IsMember({"open", "linear", "exact-gs", "neural-gs", "table-gs"}));
  s->add_option("--gamma", sim.gamma);
  s->add_option("--u0", sim.u0, "Constant initial profile");
  s->add_option("--amplitude", sim.amplitude)->capture_default_str();
  s->add_option("--nu-box", sim.nu_box, "Scheduling box |u(0,t)| <= B")->capture_default_str();
  s->add_option("--model", sim.model)->check(CLI::ExistingFile);
  s->add_option("--dt", sim.dt)->capture_default_str();
  s->add_option("--dx", sim.dx)->capture_default_str();
  s->add_option("--t-end", sim.t_end);
  s->add_option("--stride", sim.stride, "Record every N steps")->capture_default_str();
  s->add_option("--table-step", sim.table_step, "nu spacing for table-gs")->capture_default_str();
  s->add_flag("--snapshots", sim.snapshots, "Also write full-field snapshots");
  s->add_option("--out,-o", sim.out, "Output path prefix")->capture_default_str();
  with_config(s);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time exact kernel solves against inference");
  b->add_option("--model", bench.model)->required()->check(CLI::ExistingFile);
  b->add_option("--dx-list", bench.dx_list)->capture_default_str();
  b->add_option("--reps", bench.reps)->capture_default_str();
  b->add_option("--warmup", bench.warmup)->capture_default_str();
  b->add_option("--gamma", bench.gamma)->capture_default_str();
  b->add_option("--nu", bench.nu)->capture_default_str();
  b->add_option("--amplitude", bench.amplitude)->capture_default_str();
  b->add_option("--out,-o", bench.out, "CSV path (stdout when omitted)");
  b->add_flag("--check", bench.check, "Exit nonzero unless the scaling properties hold");
  b->add_option("--min-speedup", bench.min_speedup, "Finest-grid floor for --check")->capture_default_str();
  with_config(b);

  KernelArgs kern;
  auto* k = app.add_subcommand("kernel", "Dump kernel slices");
  k->add_option("--family", kern.family, "chebyshev | constant")->capture_default_str();
  k->add_option("--amplitude", kern.amplitude)->capture_default_str();
  k->add_option("--gamma", kern.gamma)->capture_default_str();
  k->add_option("--b", kern.b, "Constant family value")->capture_default_str();
  k->add_option("--nu", kern.nus, "Scheduling value(s)");
  k->add_option("--nu-range", kern.nu_range, "LO HI COUNT")->expected(3);
  k->add_option("--n", kern.n, "Grid points")->capture_default_str();
  k->add_option("--source", kern.source, "exact | neural")->capture_default_str();
  k->add_option("--diff", kern.diff, "Second source to subtract");
  k->add_option("--model", kern.model)->check(CLI::ExistingFile);
  k->add_flag("--bundle", kern.bundle, "Dump k, k_nu, k_x, k_xnu and l");
  k->add_option("--out,-o", kern.out, "CSV path (stdout when omitted)");
  with_config(k);

  VerifyArgs ver;
  auto* v = app.add_subcommand("verify", "Run the property suites");
  v->add_option("--model", ver.model, "Enables the neural suites");
  v->add_option("--out,-o", ver.out, "JSON report path (stdout when omitted)");
  with_config(v);

  try {
    std::vector<std::string> args(argv, argv + argc);
    expand_config(app, args);
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  sim.law_set = law_opt->count() > 0;

  try {
    if (g->parsed()) return cmd_gen_dataset(gen);
    if (t->parsed()) return cmd_train(tr);
    if (s->parsed()) return cmd_simulate(sim);
    if (b->parsed()) return cmd_bench(bench);
    if (k->parsed()) return cmd_kernel(kern);
    if (v->parsed()) return cmd_verify(ver);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
