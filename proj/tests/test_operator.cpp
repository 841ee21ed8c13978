#include <doctest.h>

#include <cmath>
#include <random>

#include "gsno/io.hpp"
#include "gsno/operator.hpp"

using namespace gsno;

namespace {

double max_abs(const VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

OperatorModel small_model(Targets t = Targets::KOnly, std::uint64_t seed = 4) {
  return init_model({{16, 16}, 8, {12}}, t, VectorXd::LinSpaced(11, 0.0, 1.0), seed);
}

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.n_gamma = 3;
  s.n_nu = 4;
  s.sensors = 11;
  s.queries = 21;
  s.seed = 17;
  s.train_fraction = 0.75;
  return s;
}

}  // namespace

TEST_CASE("reference shape has 282,625 parameters") {
  const OperatorModel m = init_model(ModelShape::reference(), Targets::KOnly, VectorXd::LinSpaced(101, 0, 1), 0);
  const long branch = (101 * 333 + 333) + 2 * (333 * 333 + 333) + (333 * 42 + 42);
  const long trunk = (1 * 276 + 276) + (276 * 42 + 42);
  CHECK(branch + trunk + 1 == 282625);
  CHECK(m.parameter_count() == 282625);
  CHECK(init_model(ModelShape::reference(), Targets::GainOnly, VectorXd::LinSpaced(101, 0, 1), 0).branch.outputs() ==
        84);
  CHECK(init_model(ModelShape::reference(), Targets::Full, VectorXd::LinSpaced(101, 0, 1), 0).branch.outputs() == 168);
}

TEST_CASE("Xavier-normal initialisation statistics") {
  const OperatorModel m = init_model(ModelShape::reference(), Targets::KOnly, VectorXd::LinSpaced(101, 0, 1), 9);
  const MatrixXd& w = m.branch.weights[1];
  const double sd = std::sqrt(2.0 / (333.0 + 333.0));
  const double n = static_cast<double>(w.size());
  const double mean = w.sum() / n;
  const double std = std::sqrt((w.array() - mean).square().sum() / n);
  CHECK(std::abs(mean) < 3 * sd / std::sqrt(n));
  CHECK(std == doctest::Approx(sd).epsilon(0.02));
  CHECK(m.branch.biases[1].cwiseAbs().maxCoeff() == 0.0);
  // Same seed, same weights.
  const OperatorModel again = init_model(ModelShape::reference(), Targets::KOnly, VectorXd::LinSpaced(101, 0, 1), 9);
  CHECK((again.trunk.weights[0] - m.trunk.weights[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normal source moments") {
  NormalSource n(123);
  double s = 0, s2 = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double v = n();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / N) < 0.01);
  CHECK(s2 / N == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("zero weights predict the output mean") {
  OperatorModel m = small_model(Targets::GainOnly);
  for (auto& w : m.branch.weights) w.setZero();
  m.output_mean << 2.5, -1.0;
  m.output_scale << 3.0, 7.0;
  const MatrixXd p = infer_slice(m, VectorXd::Random(11), VectorXd::LinSpaced(9, 0, 1));
  CHECK(p.rows() == 9);
  CHECK(p.cols() == 2);
  CHECK(max_abs(p.col(0) - VectorXd::Constant(9, 2.5)) == 0.0);
  CHECK(max_abs(p.col(1) - VectorXd::Constant(9, -1.0)) == 0.0);
}

TEST_CASE("half-precision engine agrees with the reference evaluation") {
  OperatorModel m = small_model();
  m.input_mean = VectorXd::Constant(11, 0.3);
  m.input_scale = VectorXd::Constant(11, 2.0);
  m.output_mean << 4.0;
  m.output_scale << 10.0;
  m.b0 << 0.2;
  const VectorXd q = VectorXd::LinSpaced(57, 0, 1);
  const InferenceEngine e(m, q);
  CHECK(e.queries() == 57);
  for (int i = 0; i < 5; ++i) {
    const VectorXd beta = VectorXd::Random(11) * 5.0;
    const VectorXd ref = infer_slice(m, beta, q).col(0);
    // The basis is stored in half precision: each term g_j phi_j(x) carries a
    // relative error of at most 2^-11, plus float slack for the rest.
    const VectorXd z = (beta - m.input_mean).cwiseQuotient(m.input_scale);
    const VectorXd g = m.branch.forward(z).col(0);
    const MatrixXd F = m.trunk.forward(trunk_input(q));
    const VectorXd bound =
        (F.cwiseAbs().transpose() * g.cwiseAbs()) * (m.output_scale[0] * std::ldexp(1.0, -11)) +
        VectorXd::Constant(q.size(), 1e-5 * (1.0 + max_abs(ref)));
    const VectorXd err = (e.predict_k(beta) - ref).cwiseAbs();
    CHECK((err.array() <= bound.array()).all());
  }
  CHECK_THROWS_AS(e.predict_k(VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("backward pass matches finite differences") {
  NormalSource rng(5);
  Mlp<double> net({3, 5, 4, 2}, true, rng);
  const MatrixXd x = MatrixXd::Random(3, 7);
  const MatrixXd target = MatrixXd::Random(2, 7);
  auto loss = [&](const Mlp<double>& n) { return 0.5 * (n.forward(x) - target).squaredNorm(); };
  MlpTape<double> tape;
  const MatrixXd y = forward_tape(net, x, tape);
  Mlp<double> grad = net.zeros_like();
  backward(net, tape, MatrixXd(y - target), grad);
  const double h = 1e-6;
  for (std::size_t l = 0; l < net.layers(); ++l)
    for (Index i = 0; i < net.weights[l].size(); i += 3) {
      Mlp<double> p = net, q = net;
      p.weights[l].data()[i] += h;
      q.weights[l].data()[i] -= h;
      CHECK(grad.weights[l].data()[i] == doctest::Approx((loss(p) - loss(q)) / (2 * h)).epsilon(1e-6));
    }
  Mlp<double> p = net, q = net;
  p.biases[1][2] += h;
  q.biases[1][2] -= h;
  CHECK(grad.biases[1][2] == doctest::Approx((loss(p) - loss(q)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("first Adam step moves by the learning rate") {
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  Adam<double> adam;
  adam.step = 1;
  Eigen::VectorXd p(3), g(3), m = Eigen::VectorXd::Zero(3), v = Eigen::VectorXd::Zero(3);
  p << 1.0, -2.0, 0.5;
  g << 0.3, -4.0, 1e-3;
  const Eigen::VectorXd p0 = p;
  adam.update(p, g, m, v, 0.01);
  for (Index i = 0; i < 3; ++i)
    CHECK(p[i] == doctest::Approx(p0[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("five-point stencil differentiates quartics exactly") {
  const Index n = 21;
  const double h = 1.0 / (n - 1);
  const MatrixXd D = five_point_stencil(n, h);
  const VectorXd x = VectorXd::LinSpaced(n, 0, 1);
  const VectorXd f = (x.array().pow(4) - 2 * x.array().cube() + x.array()).matrix();
  const VectorXd df = (4 * x.array().cube() - 6 * x.array().square() + 1).matrix();
  CHECK(max_abs(D * f - df) <= 1e-9);
  CHECK_THROWS_AS(five_point_stencil(4, 0.1), ShapeError);
}

TEST_CASE("model files roundtrip losslessly") {
  OperatorModel m = small_model(Targets::Full, 77);
  m.input_mean.setRandom();
  m.output_scale.setRandom();
  m.b0.setRandom();
  const auto bytes = encode_model(m);
  const OperatorModel r = decode_model(bytes);
  CHECK(encode_model(r) == bytes);
  CHECK(r.targets == Targets::Full);
  CHECK(r.seed == 77);
  const VectorXd beta = VectorXd::Random(11);
  const VectorXd q = VectorXd::LinSpaced(13, 0, 1);
  CHECK((infer_slice(m, beta, q) - infer_slice(r, beta, q)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corrupt model files are rejected with an offset") {
  const auto bytes = encode_model(small_model());
  for (std::size_t cut : {std::size_t(0), std::size_t(5), std::size_t(12), bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> b(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    CHECK_THROWS_AS(decode_model(b), FormatError);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_model(magic), FormatError);
  auto version = bytes;
  version[8] = 99;
  try {
    decode_model(version);
    FAIL("accepted an unknown version");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_model(trailing), FormatError);
}

TEST_CASE("dataset generation is deterministic and consistent") {
  const Dataset a = gen_dataset(tiny_spec());
  const Dataset b = gen_dataset(tiny_spec());
  CHECK(encode_dataset(a) == encode_dataset(b));
  REQUIRE(a.size() == 12);
  CHECK(a.dropped == 0);
  CHECK(a.train.size() == 9);
  CHECK(a.test.size() == 3);
  std::vector<int> seen(12, 0);
  for (Index i : a.train) seen[static_cast<std::size_t>(i)]++;
  for (Index i : a.test) seen[static_cast<std::size_t>(i)]++;
  for (int s : seen) CHECK(s == 1);

  const SpatialGrid g(21);
  for (Index r = 0; r < a.size(); ++r) {
    CHECK(a.gammas[r] >= 3.0);
    CHECK(a.gammas[r] <= 8.0);
    CHECK(std::abs(a.nus[r]) <= 5.0);
    const auto f = RecircFamily::chebyshev(5.0, a.gammas[r]);
    const KernelBundle kb = solve_bundle(f, a.nus[r], g);
    CHECK(max_abs(a.channel(0, r) - kb.k.values) == 0.0);
    CHECK(max_abs(a.channel(1, r) - kb.k_nu->values) == 0.0);
    CHECK(max_abs(a.channel(3, r) - kb.k_xnu->values) == 0.0);
    CHECK(max_abs(a.beta.col(r) - f.sample(a.sensor_xs, a.nus[r])) == 0.0);
  }
  // Records of one gamma share it.
  CHECK(a.gammas[0] == a.gammas[3]);
  DatasetSpec other = tiny_spec();
  other.seed = 18;
  CHECK(encode_dataset(gen_dataset(other)) != encode_dataset(a));
}

TEST_CASE("dataset files roundtrip and reject truncation") {
  const Dataset a = gen_dataset(tiny_spec());
  const auto bytes = encode_dataset(a);
  const Dataset r = decode_dataset(bytes);
  CHECK(encode_dataset(r) == bytes);
  CHECK(r.train == a.train);
  std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 9);
  CHECK_THROWS_AS(decode_dataset(cut), FormatError);
}

TEST_CASE("memorisation of repeated records") {
  // Four copies of one smooth record. Adam on this shape levels off near
  // 3e-4 relative error; an independent torch fit of the same setup agrees.
  DatasetSpec s;
  s.n_gamma = 1;
  s.n_nu = 4;
  s.gamma_lo = s.gamma_hi = 3.0;
  s.nu_lo = s.nu_hi = 0.0;
  s.sensors = 11;
  s.queries = 21;
  s.train_fraction = 0.75;
  Dataset ds = gen_dataset(s);
  ds.test = ds.train;
  TrainConfig cfg;
  cfg.epochs = 20000;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  cfg.precision = Precision::Double;
  const TrainResult r = train(ds, {{32, 32}, 16, {32}}, Targets::KOnly, cfg);
  REQUIRE(r.history.size() == 20000);
  CHECK(r.history.back().train_loss < 1e-5 * r.history.front().train_loss);
  CHECK(r.history.back().test_rel_l2 < 1e-3);
  CHECK(relative_l2(r.model, ds, ds.test) == doctest::Approx(r.history.back().test_rel_l2).epsilon(1e-6));
}

TEST_CASE("training is reproducible and reports each epoch") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 3;
  int calls = 0;
  const TrainResult a = train(ds, {{16}, 8, {8}}, Targets::KOnly, cfg, [&](const OperatorModel&, const EpochStats& s) {
    CHECK(s.epoch == calls);
    ++calls;
  });
  CHECK(calls == 5);
  CHECK(a.model.b0[0] != 0.0);
  const TrainResult b = train(ds, {{16}, 8, {8}}, Targets::KOnly, cfg);
  CHECK(encode_model(a.model) == encode_model(b.model));
  cfg.loss = LossKind::DerivativePenalty;
  const TrainResult c = train(ds, {{16}, 8, {8}}, Targets::GainOnly, cfg);
  CHECK(c.model.branch.outputs() == 16);
  CHECK(std::isfinite(c.history.back().train_loss));
}

TEST_CASE("divergence is reported") {
  Dataset ds = gen_dataset(tiny_spec());
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train(ds, {{8}, 4, {4}}, Targets::KOnly, cfg), DivergenceError);
}

TEST_CASE("approximation report of an exact predictor") {
  const auto f = RecircFamily::chebyshev(5.0, 3.0);
  const SpatialGrid g(101);
  const VectorXd xs = g.points();
  KernelPredictor exact = [&](double nu) {
    MatrixXd out(101, 1);
    out.col(0) = solve_k(f.sample(xs, nu), g).values;
    return out;
  };
  const VectorXd nus = VectorXd::LinSpaced(5, -1.0, 1.0);
  const ApproxReport r = approximation_report(exact, Targets::KOnly, f, nus, g);
  CHECK(r.k == 0.0);
  CHECK(r.nu_by_fd);
  CHECK(r.k_nu < 1e-4 * r.kernel_scale);
  CHECK(r.epsilon() == doctest::Approx(r.k + r.k_nu));
}

TEST_CASE("target names") {
  CHECK(parse_targets("k-only") == Targets::KOnly);
  CHECK(parse_targets("gain-only") == Targets::GainOnly);
  CHECK(parse_targets("full") == Targets::Full);
  CHECK(std::string(targets_name(Targets::GainOnly)) == "gain-only");
  CHECK_THROWS_AS(parse_targets("bogus"), Error);
}
