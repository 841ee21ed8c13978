#include "gsno/operator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "gsno/io.hpp"

#if defined(__F16C__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace gsno {

const char* targets_name(Targets t) {
  switch (t) {
    case Targets::KOnly: return "k-only";
    case Targets::GainOnly: return "gain-only";
    case Targets::Full: return "full";
  }
  return "?";
}

Targets parse_targets(const std::string& s) {
  if (s == "k-only") return Targets::KOnly;
  if (s == "gain-only") return Targets::GainOnly;
  if (s == "full") return Targets::Full;
  throw Error("unknown target variant: " + s);
}

OperatorModel init_model(const ModelShape& shape, Targets targets, const VectorXd& sensor_xs,
                         std::uint64_t seed) {
  if (shape.p < 1) throw ShapeError("latent width p must be positive");
  if (sensor_xs.size() < 1) throw ShapeError("model needs at least one sensor");
  const Index T = target_count(targets);
  std::vector<Index> bw{sensor_xs.size()};
  bw.insert(bw.end(), shape.branch_hidden.begin(), shape.branch_hidden.end());
  bw.push_back(shape.p * T);
  std::vector<Index> tw{1};
  tw.insert(tw.end(), shape.trunk_hidden.begin(), shape.trunk_hidden.end());
  tw.push_back(shape.p);

  NormalSource rng(seed);
  OperatorModel m;
  m.sensor_xs = sensor_xs;
  m.branch = Mlp<double>(bw, false, rng);
  m.trunk = Mlp<double>(tw, true, rng);
  m.p = shape.p;
  m.targets = targets;
  m.b0 = VectorXd::Zero(T);
  m.input_mean = VectorXd::Zero(sensor_xs.size());
  m.input_scale = VectorXd::Ones(sensor_xs.size());
  m.output_mean = VectorXd::Zero(T);
  m.output_scale = VectorXd::Ones(T);
  m.seed = seed;
  return m;
}

MatrixXd infer_slice(const OperatorModel& model, const VectorXd& beta_samples, const VectorXd& query_xs) {
  if (beta_samples.size() != model.sensors()) throw ShapeError("infer_slice: sensor count mismatch");
  const VectorXd z = (beta_samples - model.input_mean).cwiseQuotient(model.input_scale);
  const MatrixXd g = model.branch.forward(z);
  const MatrixXd F = model.trunk.forward(trunk_input(query_xs));
  const Index T = target_count(model.targets);
  MatrixXd out(query_xs.size(), T);
  for (Index t = 0; t < T; ++t) {
    const VectorXd raw = F.transpose() * g.col(0).segment(t * model.p, model.p);
    out.col(t) = ((raw.array() + model.b0[t]) * model.output_scale[t] + model.output_mean[t]).matrix();
  }
  return out;
}

InferenceEngine::InferenceEngine(const OperatorModel& model, const VectorXd& query_xs)
    : sensor_xs_(model.sensor_xs), branch_(model.branch.cast<float>()), p_(model.p) {
  const MatrixXd F = model.trunk.forward(trunk_input(query_xs));  // p x n
  n_ = F.cols();
  stride_ = (n_ + 7) / 8 * 8;
  basis_.assign(static_cast<std::size_t>(stride_ * p_), Eigen::half(0.0f));
  for (Index j = 0; j < p_; ++j)
    for (Index i = 0; i < n_; ++i)
      basis_[j * stride_ + i] = Eigen::half(static_cast<float>(F(j, i) * model.output_scale[0]));
  input_mean_ = model.input_mean.cast<float>();
  input_inv_scale_ = model.input_scale.cwiseInverse().cast<float>();
  offset_ = static_cast<float>(model.output_mean[0] + model.output_scale[0] * model.b0[0]);
  // Only the k block of the branch output is needed.
  auto& last_w = branch_.weights.back();
  auto& last_b = branch_.biases.back();
  if (last_w.rows() > p_) {
    Mat<float> w = last_w.topRows(p_);
    Vec<float> b = last_b.head(p_);
    last_w = std::move(w);
    last_b = std::move(b);
  }
}

void InferenceEngine::predict_k(const VectorXd& beta_samples, VectorXd& out) const {
  if (beta_samples.size() != sensor_xs_.size()) throw ShapeError("predict_k: sensor count mismatch");
  const Eigen::VectorXf z = (beta_samples.cast<float>() - input_mean_).cwiseProduct(input_inv_scale_);
  const Mat<float> g = branch_.forward(z);
  out.resize(n_);
  const Eigen::half* b = basis_.data();
  for (Index i = 0; i < stride_; i += 8) {
    alignas(32) float acc[8];
#if defined(__F16C__) && defined(__FMA__)
    __m256 a = _mm256_setzero_ps();
    for (Index j = 0; j < p_; ++j) {
      const __m256 col = _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(b + j * stride_ + i)));
      a = _mm256_fmadd_ps(col, _mm256_set1_ps(g(j, 0)), a);
    }
    _mm256_store_ps(acc, a);
#else
    std::fill(acc, acc + 8, 0.0f);
    for (Index j = 0; j < p_; ++j)
      for (int r = 0; r < 8; ++r) acc[r] += static_cast<float>(b[j * stride_ + i + r]) * g(j, 0);
#endif
    const Index m = std::min<Index>(8, n_ - i);
    for (Index r = 0; r < m; ++r) out[i + r] = static_cast<double>(acc[r] + offset_);
  }
}

VectorXd InferenceEngine::predict_k(const VectorXd& beta_samples) const {
  VectorXd out;
  predict_k(beta_samples, out);
  return out;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr char kModelMagic[9] = "GSNOMODL";
constexpr std::uint32_t kModelVersion = 1;
constexpr char kDatasetMagic[9] = "GSNODSET";
constexpr std::uint32_t kDatasetVersion = 1;

void write_mlp(BinaryWriter& w, const Mlp<double>& net) {
  const auto widths = net.widths();
  w.u64(widths.size());
  for (Index v : widths) w.u64(static_cast<std::uint64_t>(v));
  w.u8(net.tanh_output ? 1 : 0);
  for (std::size_t l = 0; l < net.layers(); ++l) {
    // Row-major weights, then biases.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = net.weights[l];
    w.f64s(rm.data(), static_cast<std::size_t>(rm.size()));
    w.f64s(net.biases[l].data(), static_cast<std::size_t>(net.biases[l].size()));
  }
}

Mlp<double> read_mlp(BinaryReader& r, const char* name) {
  const std::size_t at = r.offset();
  const std::uint64_t count = r.u64(name);
  if (count < 2 || count > 64) throw FormatError(std::string("bad layer count in ") + name, at);
  std::vector<Index> widths;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t wat = r.offset();
    const std::uint64_t v = r.u64(name);
    if (v < 1 || v > (1u << 20)) throw FormatError(std::string("bad layer width in ") + name, wat);
    widths.push_back(static_cast<Index>(v));
  }
  Mlp<double> net;
  net.tanh_output = r.u8(name) != 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(widths[l + 1], widths[l]);
    r.f64s(rm.data(), static_cast<std::size_t>(rm.size()), name);
    VectorXd b(widths[l + 1]);
    r.f64s(b.data(), static_cast<std::size_t>(b.size()), name);
    net.weights.push_back(rm);
    net.biases.push_back(std::move(b));
  }
  return net;
}

}  // namespace

std::vector<unsigned char> encode_model(const OperatorModel& m) {
  BinaryWriter w;
  w.bytes(kModelMagic, 8);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.targets));
  w.u64(m.seed);
  w.u64(static_cast<std::uint64_t>(m.p));
  w.vec(m.sensor_xs);
  write_mlp(w, m.branch);
  write_mlp(w, m.trunk);
  w.vec(m.b0);
  w.vec(m.input_mean);
  w.vec(m.input_scale);
  w.vec(m.output_mean);
  w.vec(m.output_scale);
  return w.data();
}

OperatorModel decode_model(std::vector<unsigned char> bytes) {
  BinaryReader r(std::move(bytes));
  r.magic(kModelMagic);
  const std::size_t vat = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion)
    throw FormatError("unsupported model format version " + std::to_string(version), vat);
  OperatorModel m;
  const std::size_t tat = r.offset();
  const std::uint32_t t = r.u32("target variant");
  if (t != 1 && t != 2 && t != 4) throw FormatError("unknown target variant", tat);
  m.targets = static_cast<Targets>(t);
  m.seed = r.u64("seed");
  m.p = static_cast<Index>(r.u64("p"));
  m.sensor_xs = r.vec("sensor grid", 1u << 24);
  m.branch = read_mlp(r, "branch");
  m.trunk = read_mlp(r, "trunk");
  m.b0 = r.vec("b0", 16);
  m.input_mean = r.vec("input mean", 1u << 24);
  m.input_scale = r.vec("input scale", 1u << 24);
  m.output_mean = r.vec("output mean", 16);
  m.output_scale = r.vec("output scale", 16);
  r.expect_end();

  const Index T = target_count(m.targets);
  const std::size_t end = r.offset();
  if (m.branch.inputs() != m.sensors() || m.input_mean.size() != m.sensors() ||
      m.input_scale.size() != m.sensors())
    throw FormatError("sensor count disagrees with branch input width", end);
  if (m.branch.outputs() != m.p * T || m.trunk.outputs() != m.p || m.trunk.inputs() != 1)
    throw FormatError("layer widths disagree with p and target variant", end);
  if (m.b0.size() != T || m.output_mean.size() != T || m.output_scale.size() != T)
    throw FormatError("normalisation vectors disagree with target variant", end);
  return m;
}

void save_model(const OperatorModel& model, const std::string& path) {
  write_file(path, encode_model(model));
}

OperatorModel load_model(const std::string& path) { return decode_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Datasets

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Dataset gen_dataset(const DatasetSpec& spec, const VolterraConfig& cfg) {
  if (spec.n_gamma < 1 || spec.n_nu < 1) throw Error("record counts must be positive");
  if (!(spec.gamma_lo <= spec.gamma_hi) || !(spec.nu_lo <= spec.nu_hi))
    throw Error("sampling ranges must satisfy lo <= hi");
  if (spec.sensors < 2 || spec.queries < 5) throw Error("need >= 2 sensors and >= 5 query points");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
    throw Error("train fraction must lie in (0, 1]");

  std::mt19937_64 rng(spec.seed);
  std::vector<double> gammas(static_cast<std::size_t>(spec.n_gamma));
  for (auto& g : gammas) g = spec.gamma_lo + (spec.gamma_hi - spec.gamma_lo) * uniform01(rng);
  const Index N = spec.n_gamma * spec.n_nu;
  std::vector<double> gs(static_cast<std::size_t>(N)), ns(static_cast<std::size_t>(N));
  for (Index i = 0; i < spec.n_gamma; ++i) {
    for (Index j = 0; j < spec.n_nu; ++j) {
      const auto r = static_cast<std::size_t>(i * spec.n_nu + j);
      gs[r] = gammas[static_cast<std::size_t>(i)];
      ns[r] = spec.nu_lo + (spec.nu_hi - spec.nu_lo) * uniform01(rng);
    }
  }

  const SpatialGrid grid(spec.queries);
  const VectorXd query_xs = grid.points();
  const VectorXd sensor_xs = SpatialGrid(spec.sensors).points();
  const double box = std::max(std::abs(spec.nu_lo), std::abs(spec.nu_hi));
  const Index Q = spec.queries;

  MatrixXd beta(spec.sensors, N);
  MatrixXd targets(kChannels * Q, N);
  std::vector<char> ok(static_cast<std::size_t>(N), 0);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t r) {
    const auto f = RecircFamily::chebyshev(spec.amplitude, gs[r], box);
    const auto c = static_cast<Index>(r);
    try {
      const KernelBundle b = solve_bundle(f, ns[r], grid, cfg, BundleTargets::Full);
      beta.col(c) = f.sample(sensor_xs, ns[r]);
      targets.col(c).segment(0, Q) = b.k.values;
      targets.col(c).segment(Q, Q) = b.k_nu->values;
      targets.col(c).segment(2 * Q, Q) = b.k_x->values;
      targets.col(c).segment(3 * Q, Q) = b.k_xnu->values;
      ok[r] = 1;
    } catch (const SolverError&) {
    }
  });

  Dataset ds;
  ds.spec = spec;
  ds.sensor_xs = sensor_xs;
  ds.query_xs = query_xs;
  std::vector<Index> keep;
  for (Index r = 0; r < N; ++r)
    if (ok[static_cast<std::size_t>(r)]) keep.push_back(r);
  const auto M = static_cast<Index>(keep.size());
  ds.dropped = N - M;
  ds.gammas.resize(M);
  ds.nus.resize(M);
  ds.beta.resize(spec.sensors, M);
  ds.targets.resize(kChannels * Q, M);
  for (Index i = 0; i < M; ++i) {
    const Index r = keep[static_cast<std::size_t>(i)];
    ds.gammas[i] = gs[static_cast<std::size_t>(r)];
    ds.nus[i] = ns[static_cast<std::size_t>(r)];
    ds.beta.col(i) = beta.col(r);
    ds.targets.col(i) = targets.col(r);
  }

  // Seeded Fisher-Yates shuffle, then a train/test cut.
  std::vector<Index> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 split_rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(split_rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(M)));
  ds.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  return ds;
}

std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  BinaryWriter w;
  w.bytes(kDatasetMagic, 8);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(kChannels));
  const DatasetSpec& s = ds.spec;
  w.u64(static_cast<std::uint64_t>(s.n_gamma));
  w.u64(static_cast<std::uint64_t>(s.n_nu));
  w.f64(s.gamma_lo);
  w.f64(s.gamma_hi);
  w.f64(s.nu_lo);
  w.f64(s.nu_hi);
  w.f64(s.amplitude);
  w.u64(static_cast<std::uint64_t>(s.sensors));
  w.u64(static_cast<std::uint64_t>(s.queries));
  w.u64(s.seed);
  w.f64(s.train_fraction);
  w.u64(static_cast<std::uint64_t>(ds.dropped));
  w.vec(ds.sensor_xs);
  w.vec(ds.query_xs);
  w.u64(static_cast<std::uint64_t>(ds.size()));
  for (Index r = 0; r < ds.size(); ++r) {
    w.f64(ds.gammas[r]);
    w.f64(ds.nus[r]);
    w.f64s(ds.beta.col(r).data(), static_cast<std::size_t>(ds.beta.rows()));
    w.f64s(ds.targets.col(r).data(), static_cast<std::size_t>(ds.targets.rows()));
  }
  w.u64(ds.train.size());
  for (Index i : ds.train) w.u64(static_cast<std::uint64_t>(i));
  w.u64(ds.test.size());
  for (Index i : ds.test) w.u64(static_cast<std::uint64_t>(i));
  return w.data();
}

Dataset decode_dataset(std::vector<unsigned char> bytes) {
  BinaryReader r(std::move(bytes));
  r.magic(kDatasetMagic);
  const std::size_t vat = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset format version " + std::to_string(version), vat);
  const std::size_t cat = r.offset();
  if (r.u32("channel count") != kChannels) throw FormatError("unexpected channel count", cat);
  Dataset ds;
  DatasetSpec& s = ds.spec;
  s.n_gamma = static_cast<Index>(r.u64("n_gamma"));
  s.n_nu = static_cast<Index>(r.u64("n_nu"));
  s.gamma_lo = r.f64("gamma_lo");
  s.gamma_hi = r.f64("gamma_hi");
  s.nu_lo = r.f64("nu_lo");
  s.nu_hi = r.f64("nu_hi");
  s.amplitude = r.f64("amplitude");
  s.sensors = static_cast<Index>(r.u64("sensors"));
  s.queries = static_cast<Index>(r.u64("queries"));
  s.seed = r.u64("seed");
  s.train_fraction = r.f64("train fraction");
  ds.dropped = static_cast<Index>(r.u64("dropped"));
  const std::size_t gat = r.offset();
  ds.sensor_xs = r.vec("sensor grid", 1u << 24);
  ds.query_xs = r.vec("query grid", 1u << 24);
  if (ds.sensor_xs.size() != s.sensors || ds.query_xs.size() != s.queries)
    throw FormatError("grid lengths disagree with header", gat);
  const std::size_t nat = r.offset();
  const std::uint64_t n = r.u64("record count");
  const std::uint64_t per = 16 + 8 * static_cast<std::uint64_t>(s.sensors + kChannels * s.queries);
  if (n > (1ull << 40) / per) throw FormatError("implausible record count", nat);
  const auto N = static_cast<Index>(n);
  ds.gammas.resize(N);
  ds.nus.resize(N);
  ds.beta.resize(s.sensors, N);
  ds.targets.resize(kChannels * s.queries, N);
  for (Index i = 0; i < N; ++i) {
    ds.gammas[i] = r.f64("gamma");
    ds.nus[i] = r.f64("nu");
    r.f64s(ds.beta.col(i).data(), static_cast<std::size_t>(s.sensors), "beta samples");
    r.f64s(ds.targets.col(i).data(), static_cast<std::size_t>(ds.targets.rows()), "targets");
  }
  for (auto* split : {&ds.train, &ds.test}) {
    const std::size_t at = r.offset();
    const std::uint64_t m = r.u64("split size");
    if (m > n) throw FormatError("split larger than dataset", at);
    split->resize(static_cast<std::size_t>(m));
    for (auto& idx : *split) {
      const std::size_t iat = r.offset();
      const std::uint64_t v = r.u64("split index");
      if (v >= n) throw FormatError("split index out of range", iat);
      idx = static_cast<Index>(v);
    }
  }
  r.expect_end();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace gsno
