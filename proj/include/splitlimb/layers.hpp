#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "splitlimb/checksum.hpp"
#include "splitlimb/matrix.hpp"
#include "splitlimb/rng.hpp"

namespace splitlimb {

template <typename T>
struct DenseGrads {
  Matrix<T> weights;          // [in x out]
  std::vector<T> bias;        // [out]
  Matrix<T> input;            // [batch x in]; empty when not requested
};

/// Fully connected layer: output = input * weights + bias.
///
/// forward() keeps a copy of its input until the matching backward() call;
/// backward() without a preceding forward() is a ProtocolOrderError.
template <typename T>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : weights_(in, out), bias_(out, T{}) {}
  DenseLayer(Matrix<T> weights, std::vector<T> bias) : weights_(std::move(weights)), bias_(std::move(bias)) {
    if (bias_.size() != weights_.cols()) {
      throw ShapeError("bias length " + std::to_string(bias_.size()) + " does not match weights " +
                       weights_.shape());
    }
  }

  std::size_t in() const noexcept { return weights_.rows(); }
  std::size_t out() const noexcept { return weights_.cols(); }

  Matrix<T>& weights() noexcept { return weights_; }
  const Matrix<T>& weights() const noexcept { return weights_; }
  std::vector<T>& bias() noexcept { return bias_; }
  const std::vector<T>& bias() const noexcept { return bias_; }

  bool has_cache() const noexcept { return cached_input_.has_value(); }
  void reset() noexcept { cached_input_.reset(); }

  Matrix<T> forward(const Matrix<T>& input) {
    Matrix<T> out = infer(input);
    cached_input_ = input;
    return out;
  }

  // Same arithmetic as forward() without touching the cache.
  Matrix<T> infer(const Matrix<T>& input) const {
    if (input.cols() != in()) {
      throw ShapeError("dense forward: input " + input.shape() + " does not fit weights " + weights_.shape());
    }
    Matrix<T> out = matmul(input, weights_);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias_[j];
    }
    return out;
  }

  DenseGrads<T> backward(const Matrix<T>& upstream, bool want_input_grad = true) {
    if (!cached_input_) throw ProtocolOrderError("dense backward called without a preceding forward");
    const Matrix<T>& x = *cached_input_;
    if (upstream.rows() != x.rows() || upstream.cols() != out()) {
      throw ShapeError("dense backward: upstream " + upstream.shape() + " does not match output [" +
                       std::to_string(x.rows()) + "x" + std::to_string(out()) + "]");
    }
    DenseGrads<T> g;
    g.weights = matmul_tn(x, upstream);
    g.bias.assign(out(), T{});
    for (std::size_t r = 0; r < upstream.rows(); ++r) {
      auto row = upstream.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) g.bias[j] += row[j];
    }
    if (want_input_grad) g.input = matmul_nt(upstream, weights_);
    cached_input_.reset();
    return g;
  }

  // Parameters in declaration order: weights row-major, then bias.
  void hash_into(Fnv1a64& h) const {
    h.update_values(weights_.values());
    h.update_values(std::span<const T>(bias_));
  }

  std::uint64_t checksum() const {
    Fnv1a64 h;
    hash_into(h);
    return h.value();
  }

  bool operator==(const DenseLayer& o) const { return weights_ == o.weights_ && bias_ == o.bias_; }

 private:
  Matrix<T> weights_;
  std::vector<T> bias_;
  std::optional<Matrix<T>> cached_input_;
};

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& x) {
  Matrix<T> out = x;
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

// Subgradient at exactly 0 is 0.
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x_pre, const Matrix<T>& upstream) {
  if (!x_pre.same_shape(upstream)) detail::shape_mismatch("relu_backward", x_pre, upstream);
  Matrix<T> out(upstream.rows(), upstream.cols());
  auto xs = x_pre.values();
  auto us = upstream.values();
  auto os = out.values();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] > T{0} ? us[i] : T{0};
  return out;
}

// Kept strictly inside (0, 1): saturates at the neighbours of 0 and 1.
template <typename T>
T sigmoid(T x) noexcept {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  T y;
  if (x >= T{0}) {
    y = T{1} / (T{1} + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T{1} + e);
  }
  return std::clamp(y, lo, hi);
}

template <typename T>
Matrix<T> sigmoid_forward(const Matrix<T>& x) {
  Matrix<T> out = x;
  for (T& v : out.values()) v = sigmoid(v);
  return out;
}

// Takes the sigmoid output, not its input.
template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& y, const Matrix<T>& upstream) {
  if (!y.same_shape(upstream)) detail::shape_mismatch("sigmoid_backward", y, upstream);
  Matrix<T> out(y.rows(), y.cols());
  auto ys = y.values();
  auto us = upstream.values();
  auto os = out.values();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = us[i] * (ys[i] * (T{1} - ys[i]));
  return out;
}

inline constexpr double kBceEpsilon = 1e-7;

template <typename T>
struct LossResult {
  T loss{};
  Matrix<T> grad;  // d(loss)/d(pred), same shape as pred
};

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
/// The gradient is that of the clamped expression, evaluated at the clamped
/// prediction.
template <typename T>
LossResult<T> bce_loss(const Matrix<T>& pred, const Matrix<T>& labels) {
  if (!pred.same_shape(labels) || pred.cols() != 1) detail::shape_mismatch("bce_loss", pred, labels);
  const T eps = static_cast<T>(kBceEpsilon);
  const std::size_t n = pred.rows();
  LossResult<T> r{T{}, Matrix<T>(n, 1)};
  if (n == 0) return r;
  const T inv_n = T{1} / static_cast<T>(n);
  T sum{};
  for (std::size_t i = 0; i < n; ++i) {
    const T y = labels(i, 0);
    if (y != T{0} && y != T{1}) {
      std::ostringstream os;
      os << "bce_loss: label " << y << " at row " << i << " is not 0 or 1";
      throw std::invalid_argument(os.str());
    }
    const T p = std::clamp(pred(i, 0), eps, T{1} - eps);
    sum += y == T{1} ? -std::log(p) : -std::log(T{1} - p);
    r.grad(i, 0) = (y == T{1} ? -T{1} / p : T{1} / (T{1} - p)) * inv_n;
  }
  r.loss = sum * inv_n;
  return r;
}

/// Plain SGD: p <- p - lr * g. A non-finite gradient aborts before any
/// parameter is touched.
namespace detail {

template <typename T>
void require_finite_gradient(std::span<const T> grads, const char* what) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream os;
      os << "sgd_step: non-finite gradient " << grads[i] << " for " << what << " at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

template <typename T>
void apply_sgd(std::span<T> params, std::span<const T> grads, T lr, const char* what) {
  if (params.size() != grads.size()) {
    throw ShapeError(std::string("sgd_step: ") + what + " has " + std::to_string(params.size()) +
                     " values but gradient has " + std::to_string(grads.size()));
  }
  if (!(lr > T{0}) || !std::isfinite(lr)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = params[i] - lr * grads[i];
}

}  // namespace detail

/// Plain SGD: p <- p - lr * g, no momentum or decay. A non-finite gradient
/// aborts before any parameter is touched.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, T lr, const char* what = "parameter") {
  detail::require_finite_gradient(grads, what);
  detail::apply_sgd(params, grads, lr, what);
}

template <typename T>
void sgd_step(DenseLayer<T>& layer, const DenseGrads<T>& g, T lr) {
  if (!layer.weights().same_shape(g.weights)) detail::shape_mismatch("sgd_step", layer.weights(), g.weights);
  detail::require_finite_gradient(g.weights.values(), "weights");
  detail::require_finite_gradient(std::span<const T>(g.bias), "bias");
  detail::apply_sgd(layer.weights().values(), g.weights.values(), lr, "weights");
  detail::apply_sgd(std::span<T>(layer.bias()), std::span<const T>(g.bias), lr, "bias");
}

/// Glorot-uniform weights drawn row-major from `rng`, zero bias.
template <typename T>
DenseLayer<T> init_dense(Rng& rng, std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw std::invalid_argument("init_dense: dimensions must be at least 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer<T> layer(in, out);
  for (T& w : layer.weights().values()) w = static_cast<T>(rng.uniform(-limit, limit));
  return layer;
}

template <typename T>
DenseLayer<T> init_dense(std::uint64_t seed, std::size_t in, std::size_t out) {
  Rng rng(seed);
  return init_dense<T>(rng, in, out);
}

}  // namespace splitlimb
