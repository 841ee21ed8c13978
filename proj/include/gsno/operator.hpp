#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gsno/kernels.hpp"
#include "gsno/mlp.hpp"
#include "gsno/recirc.hpp"

namespace gsno {

/// Which kernel channels a model predicts: k; k and k_nu; or k, k_nu, k_x, k_xnu.
enum class Targets : std::uint32_t { KOnly = 1, GainOnly = 2, Full = 4 };

inline Index target_count(Targets t) { return static_cast<Index>(t); }
const char* targets_name(Targets t);
Targets parse_targets(const std::string& s);

/// Channel order used everywhere: 0 k, 1 k_nu, 2 k_x, 3 k_xnu.
inline constexpr Index kChannels = 4;

struct ModelShape {
  std::vector<Index> branch_hidden;
  Index p = 0;
  std::vector<Index> trunk_hidden;

  /// 4-layer branch [m, 333, 333, 333, p], 2-layer trunk [1, 276, p], p = 42.
  /// With m = 101 and one target this totals 282,625 parameters.
  static ModelShape reference() { return {{333, 333, 333}, 42, {276}}; }
};

/// DeepONet: k_t(x) = mean_t + scale_t * (sum_j g_{t p + j}(beta~) f_j(x) + b0_t),
/// where beta~ is the standardised sensor vector.
struct OperatorModel {
  VectorXd sensor_xs;
  Mlp<double> branch;
  Mlp<double> trunk;
  Index p = 0;
  Targets targets = Targets::KOnly;
  VectorXd b0;
  VectorXd input_mean;
  VectorXd input_scale;
  VectorXd output_mean;
  VectorXd output_scale;
  std::uint64_t seed = 0;

  Index sensors() const { return sensor_xs.size(); }
  Index parameter_count() const { return branch.parameter_count() + trunk.parameter_count() + b0.size(); }
};

/// Trunk coordinates: x in [0, 1] enters the trunk as 2x - 1, one column per point.
inline MatrixXd trunk_input(const VectorXd& xs) { return (2.0 * xs.array() - 1.0).matrix().transpose(); }

/// Fresh model with Xavier-initialised weights and identity normalisation.
OperatorModel init_model(const ModelShape& shape, Targets targets, const VectorXd& sensor_xs,
                         std::uint64_t seed);

/// Predicted slices at the query points, one column per target.
MatrixXd infer_slice(const OperatorModel& model, const VectorXd& beta_samples, const VectorXd& query_xs);

/// Single-precision online evaluator for a fixed query grid. The trunk basis
/// for the grid is evaluated once at construction and stored in half
/// precision, so the readout streams half the bytes; accumulation is float.
/// predict() costs one branch pass plus a p-by-n product.
class InferenceEngine {
 public:
  InferenceEngine(const OperatorModel& model, const VectorXd& query_xs);

  /// k-hat on the query grid.
  VectorXd predict_k(const VectorXd& beta_samples) const;
  void predict_k(const VectorXd& beta_samples, VectorXd& out) const;

  const VectorXd& sensor_xs() const noexcept { return sensor_xs_; }
  Index queries() const noexcept { return n_; }

 private:
  VectorXd sensor_xs_;
  Mlp<float> branch_;
  std::vector<Eigen::half> basis_;  // p columns of stride_ trunk outputs, scaled by the k output scale
  Index n_ = 0;
  Index stride_ = 0;  // n rounded up to a multiple of 8, zero padded
  Eigen::VectorXf input_mean_;
  Eigen::VectorXf input_inv_scale_;
  float offset_ = 0.0f;
  Index p_ = 0;
};

void save_model(const OperatorModel& model, const std::string& path);
OperatorModel load_model(const std::string& path);
std::vector<unsigned char> encode_model(const OperatorModel& model);
OperatorModel decode_model(std::vector<unsigned char> bytes);

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  Index n_gamma = 100;
  Index n_nu = 200;
  double gamma_lo = 3.0;
  double gamma_hi = 8.0;
  double nu_lo = -5.0;
  double nu_hi = 5.0;
  double amplitude = 5.0;
  Index sensors = 101;
  Index queries = 101;
  std::uint64_t seed = 1;
  double train_fraction = 0.9;
};

/// Records are columns. Targets hold all four channels stacked:
/// rows [c*queries, (c+1)*queries) are channel c.
struct Dataset {
  DatasetSpec spec;
  VectorXd sensor_xs;
  VectorXd query_xs;
  VectorXd gammas;
  VectorXd nus;
  MatrixXd beta;     // sensors x records
  MatrixXd targets;  // 4*queries x records
  std::vector<Index> train;
  std::vector<Index> test;
  Index dropped = 0;

  Index size() const { return gammas.size(); }
  auto channel(Index c, Index record) const {
    return targets.col(record).segment(c * query_xs.size(), query_xs.size());
  }
};

Dataset gen_dataset(const DatasetSpec& spec, const VolterraConfig& cfg = {});

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
std::vector<unsigned char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::vector<unsigned char> bytes);

// ---------------------------------------------------------------------------
// Training

enum class LossKind { MSE, DerivativePenalty };
enum class Precision { Single, Double };

struct TrainConfig {
  Index epochs = 100;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  // Cosine decay from learning_rate to lr_floor over the run.
  bool cosine_schedule = true;
  double lr_floor = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::MSE;
  // Weight of the MSE between the 5-point derivative of predicted k and k_x.
  double penalty_weight = 0.1;
  Precision precision = Precision::Single;
};

struct EpochStats {
  Index epoch = 0;
  double train_loss = 0.0;
  // Relative L2 ||k-hat - k|| / ||k|| over every (record, query) pair.
  double train_rel_l2 = 0.0;
  double test_rel_l2 = 0.0;
  // Root mean square of k-hat - k over the test split.
  double test_rms = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  OperatorModel model;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const OperatorModel&, const EpochStats&)>;

TrainResult train(const Dataset& ds, const ModelShape& shape, Targets targets, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Five-point finite-difference d/dx on n uniform points (one-sided at the ends).
MatrixXd five_point_stencil(Index n, double h);

/// Relative L2 of channel-0 predictions over the given records.
double relative_l2(const OperatorModel& model, const Dataset& ds, const std::vector<Index>& records);

// ---------------------------------------------------------------------------
// Approximation report

/// Predicted channels at one nu on the report grid; columns follow the channel
/// order and may stop after k (or k_nu).
using KernelPredictor = std::function<MatrixXd(double nu)>;

struct ApproxReport {
  // Sup over sampled (x, nu) of |exact - predicted| per channel.
  double k = 0.0;
  double k_nu = 0.0;
  double k_x = 0.0;
  double k_xnu = 0.0;
  double kernel_scale = 0.0;  // sup |k|
  // True when k_nu (and k_x) were obtained by finite differences of k-hat.
  bool nu_by_fd = false;
  bool x_by_fd = false;
  Targets targets = Targets::KOnly;

  /// |k - k^| + |k_nu - k^_nu| (+ the x terms for Full models).
  double epsilon() const;
};

ApproxReport approximation_report(const KernelPredictor& predict, Targets targets, const RecircFamily& f,
                                  const VectorXd& nus, const SpatialGrid& grid);
ApproxReport approximation_report(const OperatorModel& model, const RecircFamily& f, const VectorXd& nus,
                                  const SpatialGrid& grid);

}  // namespace gsno
