#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gsno/grid.hpp"

namespace gsno {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Standard normal draws from a 64-bit Mersenne Twister via Box-Muller, so
/// initialisation does not depend on the standard library's distributions.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fully connected tanh network. Columns of the input are samples. Hidden
/// layers are always tanh; the last layer is tanh only if `tanh_output`.
template <typename Scalar>
struct Mlp {
  std::vector<Mat<Scalar>> weights;  // out x in
  std::vector<Vec<Scalar>> biases;
  bool tanh_output = false;

  Mlp() = default;

  /// Xavier-normal weights, zero biases.
  Mlp(const std::vector<Index>& widths, bool tanh_out, NormalSource& rng) : tanh_output(tanh_out) {
    if (widths.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const Index in = widths[l], out = widths[l + 1];
      if (in < 1 || out < 1) throw ShapeError("MLP widths must be positive");
      const double sd = std::sqrt(2.0 / static_cast<double>(in + out));
      Mat<Scalar> w(out, in);
      for (Index j = 0; j < in; ++j)
        for (Index i = 0; i < out; ++i) w(i, j) = static_cast<Scalar>(sd * rng());
      weights.push_back(std::move(w));
      biases.push_back(Vec<Scalar>::Zero(out));
    }
  }

  std::size_t layers() const noexcept { return weights.size(); }
  Index inputs() const { return weights.front().cols(); }
  Index outputs() const { return weights.back().rows(); }
  std::vector<Index> widths() const {
    std::vector<Index> w{inputs()};
    for (const auto& m : weights) w.push_back(m.rows());
    return w;
  }
  Index parameter_count() const {
    Index n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
  bool activated(std::size_t l) const { return l + 1 < layers() || tanh_output; }

  template <typename Derived>
  Mat<Scalar> forward(const Eigen::MatrixBase<Derived>& x) const {
    Mat<Scalar> a = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      Mat<Scalar> z = weights[l] * a;
      z.colwise() += biases[l];
      if (activated(l)) z = z.array().tanh();
      a = std::move(z);
    }
    return a;
  }

  template <typename T>
  Mlp<T> cast() const {
    Mlp<T> m;
    m.tanh_output = tanh_output;
    for (std::size_t l = 0; l < layers(); ++l) {
      m.weights.push_back(weights[l].template cast<T>());
      m.biases.push_back(biases[l].template cast<T>());
    }
    return m;
  }

  Mlp zeros_like() const {
    Mlp m;
    m.tanh_output = tanh_output;
    for (std::size_t l = 0; l < layers(); ++l) {
      m.weights.push_back(Mat<Scalar>::Zero(weights[l].rows(), weights[l].cols()));
      m.biases.push_back(Vec<Scalar>::Zero(biases[l].size()));
    }
    return m;
  }
};

/// Activations kept for the backward pass: acts[0] is the input, acts[l+1]
/// the output of layer l.
template <typename Scalar>
struct MlpTape {
  std::vector<Mat<Scalar>> acts;
};

template <typename Scalar, typename Derived>
const Mat<Scalar>& forward_tape(const Mlp<Scalar>& net, const Eigen::MatrixBase<Derived>& x,
                                MlpTape<Scalar>& tape) {
  tape.acts.resize(net.layers() + 1);
  tape.acts[0] = x;
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Mat<Scalar>& z = tape.acts[l + 1];
    z.noalias() = net.weights[l] * tape.acts[l];
    z.colwise() += net.biases[l];
    if (net.activated(l)) z = z.array().tanh();
  }
  return tape.acts.back();
}

/// Accumulate parameter gradients into `grad` given dL/d(output).
template <typename Scalar>
void backward(const Mlp<Scalar>& net, const MlpTape<Scalar>& tape, Mat<Scalar> d_out,
              Mlp<Scalar>& grad) {
  for (std::size_t l = net.layers(); l-- > 0;) {
    if (net.activated(l)) d_out.array() *= Scalar(1) - tape.acts[l + 1].array().square();
    grad.weights[l].noalias() += d_out * tape.acts[l].transpose();
    grad.biases[l] += d_out.rowwise().sum();
    if (l > 0) {
      Mat<Scalar> prev = net.weights[l].transpose() * d_out;
      d_out = std::move(prev);
    }
  }
}

/// Adam with bias correction, applied tensor by tensor.
template <typename Scalar>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;

  template <typename Derived, typename DG>
  void update(Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<DG>& grad,
              Eigen::MatrixBase<Derived>& m, Eigen::MatrixBase<Derived>& v, double lr) const {
    const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
    m.derived() = b1 * m.derived() + (Scalar(1) - b1) * grad.derived();
    v.derived() = b2 * v.derived() + (Scalar(1) - b2) * grad.derived().cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const Scalar step_size = static_cast<Scalar>(lr / c1);
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
    param.derived().array() -=
        step_size * m.derived().array() /
        (v.derived().array().sqrt() * inv_c2 + static_cast<Scalar>(eps));
  }
};

}  // namespace gsno
