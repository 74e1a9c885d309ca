#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitlimb/config.hpp"
#include "splitlimb/layers.hpp"
#include "splitlimb/matrix.hpp"

namespace splitlimb {

using Tensor = Matrix<float>;
using Layer = DenseLayer<float>;

inline std::string limb_component(std::size_t limb) { return "limb" + std::to_string(limb); }
inline constexpr const char* kHiddenComponent = "hidden";
inline constexpr const char* kHeadComponent = "head";

/// Client-side sub-network: one dense layer followed by ReLU. Its output is
/// the smashed data sent across the cut.
template <typename T>
class BasicLimbModel {
  using Mat = Matrix<T>;
  using DLayer = DenseLayer<T>;

 public:
  BasicLimbModel() = default;
  explicit BasicLimbModel(DLayer layer) : layer_(std::move(layer)) {}

  /// Weights keyed by the band the limb owns, not by its index, so a limb's
  /// initial parameters follow its data when bands are reassigned.
  static BasicLimbModel initial(const TrainConfig& cfg, std::size_t limb, std::size_t shard_dim) {
    const std::uint64_t stream = derive_seed(cfg.seed, {seed_tags::kLimb, cfg.band_of(limb)});
    return BasicLimbModel(init_dense<T>(stream, shard_dim, cfg.client_width));
  }

  const DLayer& layer() const noexcept { return layer_; }
  DLayer& layer() noexcept { return layer_; }
  std::size_t input_dim() const noexcept { return layer_.in(); }
  std::size_t width() const noexcept { return layer_.out(); }

  Mat forward(const Mat& shard_batch) {
    check_input(shard_batch);
    Mat pre = layer_.forward(shard_batch);
    Mat out = relu_forward(pre);
    pre_ = std::move(pre);
    return out;
  }

  Mat infer(const Mat& shard_batch) const {
    check_input(shard_batch);
    return relu_forward(layer_.infer(shard_batch));
  }

  /// Backprop of d(loss)/d(smashed) through ReLU and the dense layer, then SGD.
  void backward(const Mat& grad, T lr) {
    if (!pre_) throw ProtocolOrderError("limb backward without a matching forward");
    if (!grad.same_shape(*pre_)) {
      throw ShapeError("limb backward: gradient " + grad.shape() + " does not match smashed " + pre_->shape());
    }
    const Mat masked = relu_backward(*pre_, grad);
    const auto g = layer_.backward(masked, /*want_input_grad=*/false);
    sgd_step(layer_, g, lr);
    pre_.reset();
  }

  bool has_cache() const noexcept { return pre_.has_value(); }
  std::uint64_t checksum() const { return layer_.checksum(); }

 private:
  void check_input(const Mat& x) const {
    if (x.cols() != layer_.in()) {
      throw ShapeError("limb forward: shard width " + std::to_string(x.cols()) + " but layer expects " +
                       std::to_string(layer_.in()));
    }
  }

  DLayer layer_;
  std::optional<Mat> pre_;
};

/// Server-side hidden layer (+ReLU) over the concatenated smashed data.
template <typename T>
class BasicServerModel {
  using Mat = Matrix<T>;
  using DLayer = DenseLayer<T>;

 public:
  BasicServerModel() = default;
  BasicServerModel(DLayer hidden, std::vector<std::size_t> part_widths)
      : hidden_(std::move(hidden)), part_widths_(std::move(part_widths)) {}

  /// Glorot bound over the full fan-in; rows are drawn in per-band blocks
  /// from derive_seed(seed, {HIDD, band}) so the block for a band follows it.
  static BasicServerModel initial(const TrainConfig& cfg) {
    const std::size_t cw = cfg.client_width, in = cw * cfg.k, out = cfg.server_width;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DLayer hidden(in, out);
    for (std::size_t limb = 0; limb < cfg.k; ++limb) {
      Rng rng(derive_seed(cfg.seed, {seed_tags::kHidden, cfg.band_of(limb)}));
      for (std::size_t r = limb * cw; r < (limb + 1) * cw; ++r)
        for (T& w : hidden.weights().row(r)) w = static_cast<T>(rng.uniform(-limit, limit));
    }
    return BasicServerModel(std::move(hidden), std::vector<std::size_t>(cfg.k, cw));
  }

  const DLayer& hidden() const noexcept { return hidden_; }
  DLayer& hidden() noexcept { return hidden_; }
  const std::vector<std::size_t>& part_widths() const noexcept { return part_widths_; }

  /// Concatenates parts in the given order and returns ReLU(hidden(concat)).
  Mat forward(std::span<const Mat> parts) {
    Mat x = concat(parts);
    Mat pre = hidden_.forward(x);
    Mat out = relu_forward(pre);
    pre_ = std::move(pre);
    return out;
  }

  Mat infer(std::span<const Mat> parts) const { return relu_forward(hidden_.infer(concat(parts))); }

  /// Takes d(loss)/d(hidden output), applies SGD, and returns d(loss)/d(part)
  /// for every part, split at the same column boundaries as the concatenation.
  std::vector<Mat> backward(const Mat& grad_out, T lr) {
    if (!pre_) throw ProtocolOrderError("server backward without a matching forward");
    const Mat g_pre = relu_backward(*pre_, grad_out);
    const auto g = hidden_.backward(g_pre, /*want_input_grad=*/true);
    sgd_step(hidden_, g, lr);
    pre_.reset();
    std::vector<Mat> parts;
    std::size_t start = 0;
    for (std::size_t w : part_widths_) {
      parts.push_back(column_slice(g.input, start, w));
      start += w;
    }
    return parts;
  }

  std::uint64_t checksum() const { return hidden_.checksum(); }

 private:
  Mat concat(std::span<const Mat> parts) const {
    if (parts.size() != part_widths_.size()) {
      throw ShapeError("server forward: " + std::to_string(parts.size()) + " parts for " +
                       std::to_string(part_widths_.size()) + " limbs");
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].cols() != part_widths_[i]) {
        throw ShapeError("server forward: part " + std::to_string(i) + " is " + parts[i].shape() + ", expected width " +
                         std::to_string(part_widths_[i]));
      }
    }
    return parts.size() == 1 ? parts.front() : hconcat(parts);
  }

  DLayer hidden_;
  std::vector<std::size_t> part_widths_;
  std::optional<Mat> pre_;
};

template <typename T>
struct BasicHeadStep {
  T loss{};
  Matrix<T> grad_input;   // d(loss)/d(head input)
  Matrix<T> predictions;  // sigmoid outputs before the update
};

/// Classifier head: dense [server_width x 1] + sigmoid, trained with BCE.
template <typename T>
class BasicHeadModel {
  using Mat = Matrix<T>;
  using DLayer = DenseLayer<T>;

 public:
  BasicHeadModel() = default;
  explicit BasicHeadModel(DLayer head) : head_(std::move(head)) {}

  static BasicHeadModel initial(const TrainConfig& cfg) {
    return BasicHeadModel(init_dense<T>(derive_seed(cfg.seed, {seed_tags::kHead}), cfg.server_width, 1));
  }

  const DLayer& layer() const noexcept { return head_; }
  DLayer& layer() noexcept { return head_; }

  /// Forward, loss, backward, SGD. The returned input gradient uses the
  /// weights from before the update.
  BasicHeadStep<T> step(const Mat& acts, const Mat& labels, T lr) {
    const Mat z = head_.forward(acts);
    Mat p = sigmoid_forward(z);
    auto loss = bce_loss(p, labels);
    const Mat gz = sigmoid_backward(p, loss.grad);
    auto g = head_.backward(gz, /*want_input_grad=*/true);
    sgd_step(head_, g, lr);
    return {loss.loss, std::move(g.input), std::move(p)};
  }

  Mat infer(const Mat& acts) const { return sigmoid_forward(head_.infer(acts)); }

  std::uint64_t checksum() const { return head_.checksum(); }

 private:
  DLayer head_;
};

using LimbModel = BasicLimbModel<float>;
using ServerModel = BasicServerModel<float>;
using HeadModel = BasicHeadModel<float>;
using HeadStep = BasicHeadStep<float>;

inline Tensor labels_tensor(std::span<const int> labels) {
  Tensor t(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, 0) = static_cast<float>(labels[i]);
  return t;
}

/// Running loss/accuracy over evaluation batches; prediction >= 0.5 is class 1.
struct EvalAccumulator {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;

  void add(const Tensor& predictions, const Tensor& labels) {
    const auto l = bce_loss(predictions, labels);
    loss_sum += static_cast<double>(l.loss) * static_cast<double>(predictions.rows());
    for (std::size_t i = 0; i < predictions.rows(); ++i) {
      const int predicted = predictions(i, 0) >= 0.5f ? 1 : 0;
      if (predicted == static_cast<int>(labels(i, 0))) ++correct;
    }
    total += predictions.rows();
  }

  float loss() const noexcept { return total ? static_cast<float>(loss_sum / static_cast<double>(total)) : 0.0f; }
  double accuracy() const noexcept { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

}  // namespace splitlimb
