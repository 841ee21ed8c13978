#include "gsno/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "gsno/kernels.hpp"

namespace gsno {

namespace {

using clock_type = std::chrono::steady_clock;

template <typename Fn>
double median_seconds(Index reps, Index warmup, Fn&& fn) {
  for (Index i = 0; i < warmup; ++i) fn();
  std::vector<double> t(static_cast<std::size_t>(reps));
  for (auto& v : t) {
    const auto a = clock_type::now();
    fn();
    v = std::chrono::duration<double>(clock_type::now() - a).count();
  }
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

// Keeps results observable so the timed work is not optimised away.
volatile double g_sink = 0.0;

}  // namespace

std::vector<BenchRecord> bench_kernel(const RecircFamily& f, double nu, const OperatorModel& model,
                                      const BenchConfig& cfg) {
  if (cfg.repetitions < 1 || cfg.warmup < 0) throw Error("repetitions must be >= 1 and warmup >= 0");
  std::vector<BenchRecord> rows;
  for (double dx : cfg.dx_list) {
    BenchRecord r;
    r.dx = dx;
    r.repetitions = cfg.repetitions;
    r.warmup = cfg.warmup;
    try {
      const SpatialGrid grid = SpatialGrid::with_step(dx);
      r.n = grid.size();
      const VectorXd xs = grid.points();
      VectorXd k;
      r.t_exact_s = median_seconds(cfg.repetitions, cfg.warmup, [&] {
        k = solve_k(f.sample(xs, nu), grid, {}, nu).values;
        g_sink = g_sink + k[k.size() - 1];
      });

      const auto s0 = clock_type::now();
      const InferenceEngine engine(model, xs);
      r.t_neural_setup_s = std::chrono::duration<double>(clock_type::now() - s0).count();
      VectorXd k_hat;
      r.t_neural_s = median_seconds(cfg.repetitions, cfg.warmup, [&] {
        engine.predict_k(f.sample(model.sensor_xs, nu), k_hat);
        g_sink = g_sink + k_hat[k_hat.size() - 1];
      });
      r.t_neural_full_s = median_seconds(cfg.repetitions, cfg.warmup, [&] {
        const MatrixXd p = infer_slice(model, f.sample(model.sensor_xs, nu), xs);
        g_sink = g_sink + p(0, 0);
      });
      r.speedup = r.t_exact_s / r.t_neural_s;
      const double scale = std::max(k.cwiseAbs().maxCoeff(), 1e-300);
      r.slice_error = (k - k_hat).cwiseAbs().maxCoeff() / scale;
    } catch (const Error& e) {
      r.error = e.what();
    }
    rows.push_back(r);
  }
  return rows;
}

std::string environment_fingerprint() {
  char host[256] = {0};
  if (gethostname(host, sizeof(host) - 1) != 0) std::snprintf(host, sizeof(host), "unknown");
  std::ostringstream os;
  os << "# host=" << host << ", cores=" << std::thread::hardware_concurrency() << ", build=";
#ifdef NDEBUG
  os << "release";
#else
  os << "debug";
#endif
#if defined(__AVX512F__)
  os << "+avx512";
#elif defined(__AVX2__)
  os << "+avx2";
#endif
  os << ", eigen=" << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION;
  return os.str();
}

std::string bench_csv(const std::vector<BenchRecord>& rows) {
  std::ostringstream os;
  os << environment_fingerprint() << "\n";
  os << "dx,n,t_exact_s,t_neural_s,speedup,slice_error,t_neural_full_s,t_neural_setup_s,reps,warmup,error\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6g,%ld,%.9e,%.9e,%.6e,%.6e,%.9e,%.9e,%ld,%ld,", r.dx,
                  static_cast<long>(r.n), r.t_exact_s, r.t_neural_s, r.speedup, r.slice_error, r.t_neural_full_s,
                  r.t_neural_setup_s, static_cast<long>(r.repetitions), static_cast<long>(r.warmup));
    os << buf;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    os << err << "\n";
  }
  return os.str();
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return std::nan("");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BenchCheck check_bench(const std::vector<BenchRecord>& rows, double min_final_speedup, Index min_n) {
  BenchCheck c;
  for (const auto& r : rows)
    if (!r.error.empty()) c.failures.push_back("row dx=" + std::to_string(r.dx) + " failed: " + r.error);
  if (!c.failures.empty()) return c;
  c.monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].speedup > rows[i - 1].speedup)) c.monotone = false;
  if (!c.monotone) c.failures.push_back("speedup is not strictly increasing");
  std::vector<double> n, te, tn;
  for (const auto& r : rows) {
    if (r.n < min_n) continue;
    n.push_back(static_cast<double>(r.n));
    te.push_back(r.t_exact_s);
    tn.push_back(r.t_neural_s);
  }
  c.exact_slope = loglog_slope(n, te);
  c.neural_slope = loglog_slope(n, tn);
  if (n.size() >= 2) {
    if (!(c.exact_slope >= 1.7 && c.exact_slope <= 2.3))
      c.failures.push_back("exact-solve slope " + std::to_string(c.exact_slope) + " outside [1.7, 2.3]");
    if (!(c.neural_slope <= 1.3))
      c.failures.push_back("inference slope " + std::to_string(c.neural_slope) + " above 1.3");
  }
  c.final_speedup = rows.empty() ? 0.0 : rows.back().speedup;
  if (!rows.empty() && !(c.final_speedup >= min_final_speedup))
    c.failures.push_back("finest-grid speedup " + std::to_string(c.final_speedup) + " below " +
                         std::to_string(min_final_speedup));
  return c;
}

}  // namespace gsno
