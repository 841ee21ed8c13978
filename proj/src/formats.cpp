#include "gsno/formats.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "gsno/io.hpp"

namespace gsno {

std::string trajectory_csv(const Trajectory& tr) {
  std::ostringstream os;
  os << "t,u0,U,Omega,termination\n";
  const char* term = termination_name(tr.termination);
  char buf[160];
  for (const auto& s : tr.samples) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.17g,%.17g,%.17g,", s.t, s.u0, s.U, s.omega);
    os << buf << term << "\n";
  }
  return os.str();
}

Snapshots snapshots_of(const Trajectory& tr) {
  if (tr.snapshots.size() != tr.samples.size()) throw ShapeError("trajectory has no snapshots");
  Snapshots s;
  s.dx = tr.dx;
  s.dt = tr.dt;
  const Index nt = static_cast<Index>(tr.snapshots.size());
  const Index n = nt ? tr.snapshots.front().size() : 0;
  s.values.resize(nt, n);
  for (Index i = 0; i < nt; ++i) {
    s.values.row(i) = tr.snapshots[static_cast<std::size_t>(i)].transpose();
    s.times.push_back(tr.samples[static_cast<std::size_t>(i)].t);
  }
  return s;
}

std::vector<unsigned char> encode_snapshots(const Snapshots& s) {
  if (static_cast<Index>(s.times.size()) != s.values.rows()) throw ShapeError("snapshot times/rows mismatch");
  BinaryWriter w;
  w.bytes("GSNOSNAP", 8);
  w.u32(1);
  w.u64(static_cast<std::uint64_t>(s.values.cols()));
  w.u64(static_cast<std::uint64_t>(s.values.rows()));
  w.f64(s.dx);
  w.f64(s.dt);
  w.f64s(s.times.data(), s.times.size());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = s.values;
  w.f64s(rm.data(), static_cast<std::size_t>(rm.size()));
  return w.data();
}

Snapshots decode_snapshots(std::vector<unsigned char> bytes) {
  BinaryReader r(std::move(bytes));
  r.magic("GSNOSNAP");
  const std::size_t at = r.offset();
  if (r.u32("version") != 1) throw FormatError("unsupported snapshot version", at);
  const std::uint64_t n = r.u64("n"), nt = r.u64("nt");
  if (n > (1ull << 28) || nt > (1ull << 28)) throw FormatError("implausible snapshot dimensions", r.offset());
  Snapshots s;
  s.dx = r.f64("dx");
  s.dt = r.f64("dt");
  s.times.resize(nt);
  r.f64s(s.times.data(), nt, "times");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Index>(nt),
                                                                            static_cast<Index>(n));
  r.f64s(rm.data(), n * nt, "values");
  r.expect_end();
  s.values = rm;
  return s;
}

std::string run_summary_json(const ScenarioInfo& sc, const ClosedLoopRun& run, double stable_tol,
                             const DiagnosticsReport* diag) {
  const Trajectory& tr = run.trajectory;
  auto timing = [](const TimingStats& t) {
    return nlohmann::ordered_json{{"count", t.count}, {"min_s", t.min}, {"median_s", t.median},
                                  {"max_s", t.max}, {"total_s", t.total}};
  };
  nlohmann::ordered_json j;
  j["scenario"] = sc.name;
  j["law"] = run.law;
  j["gamma"] = sc.gamma;
  j["amplitude"] = sc.amplitude;
  j["u0"] = sc.u0;
  j["dx"] = tr.dx;
  j["dt"] = tr.dt;
  j["termination"] = termination_name(tr.termination);
  j["termination_time"] = tr.termination_time;
  if (!tr.detail.empty()) j["detail"] = tr.detail;
  j["final_t"] = tr.samples.empty() ? 0.0 : tr.samples.back().t;
  j["final_omega"] = tr.samples.empty() ? 0.0 : tr.samples.back().omega;
  j["stabilized"] = stabilized(tr, stable_tol);
  j["stable_tolerance"] = stable_tol;
  j["kernel_time"] = timing(run.kernel_time);
  j["integral_time"] = timing(run.integral_time);
  if (diag) {
    const double v0 = diag->lyapunov.empty() ? 0.0 : diag->lyapunov.front().V;
    j["lyapunov"] = {{"c", 1.0},
                     {"from_t", 1.0},
                     {"V0", v0},
                     {"decay", diag->decay_holds},
                     {"worst_increase", diag->worst_increase},
                     {"agmon", diag->agmon}};
  }
  return j.dump(2) + "\n";
}

}  // namespace gsno
