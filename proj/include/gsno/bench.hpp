#pragma once

#include <string>
#include <vector>

#include "gsno/operator.hpp"
#include "gsno/recirc.hpp"

namespace gsno {

struct BenchRecord {
  double dx = 0.0;
  Index n = 0;
  double t_exact_s = 0.0;   // median: sample beta on the grid + marching solve
  double t_neural_s = 0.0;  // median: sample beta at the sensors + online inference
  double speedup = 0.0;
  // Median of a cold double-precision prediction that re-evaluates the trunk.
  double t_neural_full_s = 0.0;
  // One-off cost of preparing the online evaluator for this grid.
  double t_neural_setup_s = 0.0;
  // max |k - k-hat| / max |k| on this grid.
  double slice_error = 0.0;
  Index repetitions = 0;
  Index warmup = 0;
  std::string error;  // non-empty when the row failed
};

struct BenchConfig {
  std::vector<double> dx_list{1e-2, 1e-3, 5e-4, 1e-4};
  Index repetitions = 11;
  Index warmup = 3;
};

std::vector<BenchRecord> bench_kernel(const RecircFamily& f, double nu, const OperatorModel& model,
                                      const BenchConfig& cfg = {});

/// "# host=..., cores=..., build=..." comment line.
std::string environment_fingerprint();

std::string bench_csv(const std::vector<BenchRecord>& rows);

struct BenchCheck {
  bool monotone = false;
  double exact_slope = 0.0;   // log t_exact vs log n over rows with n >= min_n
  double neural_slope = 0.0;  // same for t_neural
  double final_speedup = 0.0;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

/// Monotone speedup, exact slope in [1.7, 2.3], neural slope <= 1.3, and the
/// finest row's speedup at least `min_final_speedup`.
BenchCheck check_bench(const std::vector<BenchRecord>& rows, double min_final_speedup = 100.0,
                       Index min_n = 1000);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gsno
