#include <chrono>
#include <cmath>
#include <random>

#include "gsno/operator.hpp"

namespace gsno {

MatrixXd five_point_stencil(Index n, double h) {
  if (n < 5) throw ShapeError("five-point stencil needs n >= 5");
  MatrixXd D = MatrixXd::Zero(n, n);
  const double s = 1.0 / (12.0 * h);
  const double edge0[5] = {-25, 48, -36, 16, -3};
  const double edge1[5] = {-3, -10, 18, -6, 1};
  for (int j = 0; j < 5; ++j) {
    D(0, j) = s * edge0[j];
    D(1, j) = s * edge1[j];
    D(n - 1, n - 1 - j) = -s * edge0[j];
    D(n - 2, n - 1 - j) = -s * edge1[j];
  }
  for (Index i = 2; i < n - 2; ++i) {
    D(i, i - 2) = s;
    D(i, i - 1) = -8 * s;
    D(i, i + 1) = 8 * s;
    D(i, i + 2) = -s;
  }
  return D;
}

namespace {

double mean_std(const MatrixXd& block, double& scale) {
  const double n = static_cast<double>(block.size());
  const double mean = block.sum() / n;
  const double var = (block.array() - mean).square().sum() / n;
  scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  return mean;
}

MatrixXd gather(const MatrixXd& m, const std::vector<Index>& cols) {
  MatrixXd out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Index>(i)) = m.col(cols[i]);
  return out;
}

template <typename S>
struct Params {
  Mlp<S> branch;
  Mlp<S> trunk;
  Vec<S> b0;
};

/// Channel-0 errors of the current parameters over `records`, in physical units.
template <typename S>
void evaluate(const Params<S>& P, const Mat<S>& X, const MatrixXd& K, const std::vector<Index>& records,
              const Mat<S>& F, Index p, double mean, double scale, double& rel, double& rms) {
  double num = 0.0, den = 0.0;
  const Index Q = F.cols();
  constexpr std::size_t chunk = 1024;
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::size_t stop = std::min(records.size(), start + chunk);
    Mat<S> xb(X.rows(), static_cast<Index>(stop - start));
    for (std::size_t i = start; i < stop; ++i) xb.col(static_cast<Index>(i - start)) = X.col(records[i]);
    const Mat<S> G = P.branch.forward(xb);
    const Mat<S> Y = F.transpose() * G.topRows(p);
    for (std::size_t i = start; i < stop; ++i) {
      const auto c = static_cast<Index>(i - start);
      const VectorXd pred =
          ((Y.col(c).template cast<double>().array() + static_cast<double>(P.b0[0])) * scale + mean).matrix();
      const auto truth = K.col(records[i]).head(Q);
      num += (pred - truth).squaredNorm();
      den += truth.squaredNorm();
    }
  }
  rel = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
  rms = records.empty() ? 0.0 : std::sqrt(num / static_cast<double>(records.size() * static_cast<std::size_t>(Q)));
}

template <typename S>
OperatorModel to_model(const Params<S>& P, const OperatorModel& meta) {
  OperatorModel m = meta;
  m.branch = P.branch.template cast<double>();
  m.trunk = P.trunk.template cast<double>();
  m.b0 = P.b0.template cast<double>();
  return m;
}

template <typename S>
TrainResult train_impl(const Dataset& ds, const ModelShape& shape, Targets targets, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  const Index T = target_count(targets);
  const Index Q = ds.query_xs.size();
  const Index m = ds.sensor_xs.size();
  const Index p = shape.p;
  const std::vector<Index>& train = ds.train;

  OperatorModel meta = init_model(shape, targets, ds.sensor_xs, cfg.seed);

  // Normalisation from the training split only.
  const MatrixXd Btr = gather(ds.beta, train);
  meta.input_mean = Btr.rowwise().mean();
  meta.input_scale.resize(m);
  for (Index i = 0; i < m; ++i) {
    const double var = (Btr.row(i).array() - meta.input_mean[i]).square().mean();
    meta.input_scale[i] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  const MatrixXd Ttr = gather(ds.targets, train);
  for (Index t = 0; t < T; ++t) {
    double s = 1.0;
    meta.output_mean[t] = mean_std(Ttr.middleRows(t * Q, Q), s);
    meta.output_scale[t] = s;
  }
  double kx_scale = 1.0;
  mean_std(Ttr.middleRows(2 * Q, Q), kx_scale);

  const Index N = ds.size();
  const Mat<S> X = ((ds.beta.colwise() - meta.input_mean).array().colwise() / meta.input_scale.array())
                       .matrix()
                       .template cast<S>();
  MatrixXd Yd(T * Q, N);
  for (Index t = 0; t < T; ++t)
    Yd.middleRows(t * Q, Q) =
        ((ds.targets.middleRows(t * Q, Q).array() - meta.output_mean[t]) / meta.output_scale[t]).matrix();
  const Mat<S> Y = Yd.template cast<S>();
  const bool penalty = cfg.loss == LossKind::DerivativePenalty;
  Mat<S> KX;
  Mat<S> D;
  S dscale = S(0);
  if (penalty) {
    KX = (ds.targets.middleRows(2 * Q, Q) / kx_scale).template cast<S>();
    D = five_point_stencil(Q, ds.query_xs[1] - ds.query_xs[0]).template cast<S>();
    dscale = static_cast<S>(meta.output_scale[0] / kx_scale);
  }

  Params<S> P{meta.branch.template cast<S>(), meta.trunk.template cast<S>(), meta.b0.template cast<S>()};
  Params<S> Mo{P.branch.zeros_like(), P.trunk.zeros_like(), Vec<S>::Zero(T)};
  Params<S> Vo{P.branch.zeros_like(), P.trunk.zeros_like(), Vec<S>::Zero(T)};
  Params<S> Gr{P.branch.zeros_like(), P.trunk.zeros_like(), Vec<S>::Zero(T)};
  Adam<S> adam{cfg.beta1, cfg.beta2, cfg.eps, 0};
  const Mat<S> trunk_in = trunk_input(ds.query_xs).template cast<S>();

  auto zero = [](Params<S>& g) {
    for (auto& w : g.branch.weights) w.setZero();
    for (auto& b : g.branch.biases) b.setZero();
    for (auto& w : g.trunk.weights) w.setZero();
    for (auto& b : g.trunk.biases) b.setZero();
    g.b0.setZero();
  };
  auto step_net = [&](Mlp<S>& net, Mlp<S>& mo, Mlp<S>& vo, const Mlp<S>& g, double lr) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      adam.update(net.weights[l], g.weights[l], mo.weights[l], vo.weights[l], lr);
      adam.update(net.biases[l], g.biases[l], mo.biases[l], vo.biases[l], lr);
    }
  };

  std::mt19937_64 shuffle_rng(cfg.seed + 0x5851f42d4c957f2dull);
  std::vector<Index> order = train;
  MlpTape<S> btape, ttape;
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (cfg.cosine_schedule && cfg.epochs > 1)
      lr = cfg.lr_floor + (cfg.learning_rate - cfg.lr_floor) * 0.5 *
                              (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>((shuffle_rng() >> 11) * 0x1.0p-53 * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto B = static_cast<Index>(stop - start);
      Mat<S> xb(m, B), yb(T * Q, B), kxb;
      if (penalty) kxb.resize(Q, B);
      for (Index c = 0; c < B; ++c) {
        const Index r = order[start + static_cast<std::size_t>(c)];
        xb.col(c) = X.col(r);
        yb.col(c) = Y.col(r);
        if (penalty) kxb.col(c) = KX.col(r);
      }
      const Mat<S>& G = forward_tape(P.branch, xb, btape);
      const Mat<S>& F = forward_tape(P.trunk, trunk_in, ttape);

      zero(Gr);
      Mat<S> dG(p * T, B);
      Mat<S> dF = Mat<S>::Zero(p, Q);
      const S inv = S(1) / static_cast<S>(B * Q * T);
      double loss = 0.0;
      for (Index t = 0; t < T; ++t) {
        Mat<S> R = F.transpose() * G.middleRows(t * p, p);  // Q x B
        R.array() += P.b0[t];
        R -= yb.middleRows(t * Q, Q);
        loss += static_cast<double>(R.squaredNorm() * inv);
        Mat<S> dY = (S(2) * inv) * R;
        if (t == 0 && penalty) {
          const S w = static_cast<S>(cfg.penalty_weight);
          const S pinv = S(1) / static_cast<S>(B * Q);
          Mat<S> Yhat = R + yb.topRows(Q);
          Mat<S> Rd = dscale * (D * Yhat) - kxb;
          loss += static_cast<double>(w * Rd.squaredNorm() * pinv);
          dY.noalias() += (S(2) * w * pinv * dscale) * (D.transpose() * Rd);
        }
        Gr.b0[t] = dY.sum();
        dG.middleRows(t * p, p).noalias() = F * dY;
        dF.noalias() += G.middleRows(t * p, p) * dY.transpose();
      }
      if (!std::isfinite(loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += loss;
      ++batches;

      backward(P.branch, btape, std::move(dG), Gr.branch);
      backward(P.trunk, ttape, std::move(dF), Gr.trunk);
      ++adam.step;
      step_net(P.branch, Mo.branch, Vo.branch, Gr.branch, lr);
      step_net(P.trunk, Mo.trunk, Vo.trunk, Gr.trunk, lr);
      adam.update(P.b0, Gr.b0, Mo.b0, Vo.b0, lr);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    const Mat<S> F = P.trunk.forward(trunk_in);
    double rms_train = 0.0;
    evaluate(P, X, ds.targets, ds.train, F, p, meta.output_mean[0], meta.output_scale[0], st.train_rel_l2,
             rms_train);
    evaluate(P, X, ds.targets, ds.test, F, p, meta.output_mean[0], meta.output_scale[0], st.test_rel_l2,
             st.test_rms);
    if (!std::isfinite(st.train_rel_l2) || !std::isfinite(st.test_rel_l2))
      throw DivergenceError("non-finite error at epoch " + std::to_string(epoch));
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(st);
    if (on_epoch) on_epoch(to_model(P, meta), st);
  }
  result.model = to_model(P, meta);
  return result;
}

}  // namespace

TrainResult train(const Dataset& ds, const ModelShape& shape, Targets targets, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (ds.train.empty()) throw Error("training split is empty");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    throw Error("epochs, batch size and learning rate must be positive");
  if (ds.query_xs.size() < 5 && cfg.loss == LossKind::DerivativePenalty)
    throw Error("derivative penalty needs at least 5 query points");
  if (cfg.precision == Precision::Single) return train_impl<float>(ds, shape, targets, cfg, on_epoch);
  return train_impl<double>(ds, shape, targets, cfg, on_epoch);
}

double relative_l2(const OperatorModel& model, const Dataset& ds, const std::vector<Index>& records) {
  double num = 0.0, den = 0.0;
  for (Index r : records) {
    const VectorXd pred = infer_slice(model, ds.beta.col(r), ds.query_xs).col(0);
    const auto truth = ds.channel(0, r);
    num += (pred - truth).squaredNorm();
    den += truth.squaredNorm();
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

// ---------------------------------------------------------------------------

double ApproxReport::epsilon() const {
  const double base = k + k_nu;
  return targets == Targets::Full ? base + k_x + k_xnu : base;
}

ApproxReport approximation_report(const KernelPredictor& predict, Targets targets, const RecircFamily& f,
                                  const VectorXd& nus, const SpatialGrid& grid) {
  ApproxReport rep;
  rep.targets = targets;
  const double dx = grid.dx();
  const double box = f.nu_box();
  constexpr double h = 1e-3;
  for (Index i = 0; i < nus.size(); ++i) {
    const double nu = nus[i];
    const KernelBundle ex = solve_bundle(f, nu, grid, {}, BundleTargets::Full);
    const MatrixXd P = predict(nu);
    if (P.rows() != grid.size() || P.cols() < 1) throw ShapeError("predictor returned a bad slice");
    const VectorXd k_hat = P.col(0);
    VectorXd k_nu_hat;
    if (P.cols() >= 2) {
      k_nu_hat = P.col(1);
    } else {
      rep.nu_by_fd = true;
      const double lo = std::max(-box, nu - h), hi = std::min(box, nu + h);
      k_nu_hat = (predict(hi).col(0) - predict(lo).col(0)) / (hi - lo);
    }
    VectorXd k_x_hat, k_xnu_hat;
    if (P.cols() >= 4) {
      k_x_hat = P.col(2);
      k_xnu_hat = P.col(3);
    } else {
      rep.x_by_fd = true;
      k_x_hat = grid_derivative(k_hat, dx);
      k_xnu_hat = grid_derivative(k_nu_hat, dx);
    }
    rep.kernel_scale = std::max(rep.kernel_scale, ex.k.values.cwiseAbs().maxCoeff());
    rep.k = std::max(rep.k, (ex.k.values - k_hat).cwiseAbs().maxCoeff());
    rep.k_nu = std::max(rep.k_nu, (ex.k_nu->values - k_nu_hat).cwiseAbs().maxCoeff());
    rep.k_x = std::max(rep.k_x, (ex.k_x->values - k_x_hat).cwiseAbs().maxCoeff());
    rep.k_xnu = std::max(rep.k_xnu, (ex.k_xnu->values - k_xnu_hat).cwiseAbs().maxCoeff());
  }
  return rep;
}

ApproxReport approximation_report(const OperatorModel& model, const RecircFamily& f, const VectorXd& nus,
                                  const SpatialGrid& grid) {
  const VectorXd xs = grid.points();
  auto predict = [&](double nu) { return infer_slice(model, f.sample(model.sensor_xs, nu), xs); };
  return approximation_report(predict, model.targets, f, nus, grid);
}

}  // namespace gsno
