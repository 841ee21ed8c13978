#pragma once

#include <string>
#include <vector>

#include "gsno/control.hpp"
#include "gsno/plant.hpp"

namespace gsno {

/// t,u0,U,Omega,termination; the termination column repeats the run's outcome
/// on every row so any slice of the file is self-describing.
std::string trajectory_csv(const Trajectory& tr);

/// Snapshot fields: "GSNOSNAP", u32 version, u64 n, u64 nt, f64 dx, f64 dt,
/// nt f64 times, then nt x n row-major values.
struct Snapshots {
  double dx = 0.0;
  double dt = 0.0;
  std::vector<double> times;
  MatrixXd values;  // nt x n
};

Snapshots snapshots_of(const Trajectory& tr);
std::vector<unsigned char> encode_snapshots(const Snapshots& s);
Snapshots decode_snapshots(std::vector<unsigned char> bytes);

struct ScenarioInfo {
  std::string name;
  double gamma = 0.0;
  double u0 = 0.0;
  double amplitude = 5.0;
};

/// JSON summary of one closed-loop run. With `diag`, a "lyapunov" block
/// reports the decay verdict (c = 1, t > 1) and the Agmon check.
std::string run_summary_json(const ScenarioInfo& sc, const ClosedLoopRun& run, double stable_tol = 1e-3,
                             const DiagnosticsReport* diag = nullptr);

}  // namespace gsno
