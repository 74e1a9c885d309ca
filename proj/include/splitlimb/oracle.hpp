#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitlimb/config.hpp"
#include "splitlimb/models.hpp"
#include "splitlimb/parties.hpp"
#include "splitlimb/shards.hpp"
#include "splitlimb/trace.hpp"

namespace splitlimb {

/// Centralized network equivalent to a split session: one dense layer over the
/// whole flattened image whose [band pixels x client_width] blocks are the limb
/// layers and whose cross-block entries are zero and never updated, followed by
/// the server's hidden layer and the head.
///
/// Limb i owns column block [i*cw, (i+1)*cw) and the pixels of band specs[i].
class MonolithicModel {
 public:
  MonolithicModel(Layer first, std::vector<ShardSpec> specs, std::size_t width, std::size_t height,
                  std::size_t client_width, ServerModel server, HeadModel head)
      : first_(std::move(first)),
        specs_(std::move(specs)),
        width_(width),
        height_(height),
        cw_(client_width),
        server_(std::move(server)),
        head_(std::move(head)) {
    build_mask();
  }

  const Layer& first() const noexcept { return first_; }
  const ServerModel& server() const noexcept { return server_; }
  const HeadModel& head() const noexcept { return head_; }
  const std::vector<ShardSpec>& specs() const noexcept { return specs_; }
  std::size_t limb_count() const noexcept { return specs_.size(); }
  std::size_t image_width() const noexcept { return width_; }
  std::size_t image_height() const noexcept { return height_; }

  /// Whether first-layer weight (pixel, column) lies inside a limb block.
  bool in_block(std::size_t pixel, std::size_t col) const { return mask_.at(pixel * first_.out() + col) != 0; }

  /// Sum of |w| over all cross-block weights.
  double cross_block_mass() const {
    double s = 0.0;
    const auto w = first_.weights().values();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!mask_[i]) s += std::abs(static_cast<double>(w[i]));
    return s;
  }

  /// Recovers limb i's layer from its block.
  LimbModel extract_limb(std::size_t limb) const {
    const ShardSpec& s = specs_.at(limb);
    const std::size_t bw = s.band_width();
    Layer out(bw * height_, cw_);
    for (std::size_t y = 0; y < height_; ++y)
      for (std::size_t x = s.col_start; x < s.col_end; ++x)
        for (std::size_t j = 0; j < cw_; ++j)
          out.weights()(y * bw + (x - s.col_start), j) = first_.weights()(y * width_ + x, limb * cw_ + j);
    for (std::size_t j = 0; j < cw_; ++j) out.bias()[j] = first_.bias()[limb * cw_ + j];
    return LimbModel(std::move(out));
  }

  /// Server model with its hidden layer read back as k parts.
  ServerModel extract_server() const {
    return ServerModel(server_.hidden(), std::vector<std::size_t>(specs_.size(), cw_));
  }

  Tensor infer(const Tensor& images) const {
    const Tensor h = relu_forward(first_.infer(images));
    return head_.infer(server_.infer(std::span<const Tensor>(&h, 1)));
  }

  /// One SGD step on a batch of full images; returns the batch loss.
  float train_step(const Tensor& images, const Tensor& labels, float lr) {
    const Tensor pre = first_.forward(images);
    const Tensor h = relu_forward(pre);
    const Tensor acts = server_.forward(std::span<const Tensor>(&h, 1));
    auto hs = head_.step(acts, labels, lr);
    const auto g_h = server_.backward(hs.grad_input, lr);
    auto g = first_.backward(relu_backward(pre, g_h.front()), /*want_input_grad=*/false);
    auto gw = g.weights.values();
    for (std::size_t i = 0; i < mask_.size(); ++i)
      if (!mask_[i]) gw[i] = 0.0f;
    sgd_step(first_, g, lr);
    return hs.loss;
  }

 private:
  void build_mask() {
    const std::size_t k = specs_.size();
    if (first_.in() != width_ * height_ || first_.out() != k * cw_) {
      throw ShapeError("monolithic: first layer " + first_.weights().shape() + " does not fit " + std::to_string(k) +
                       " limbs over a " + std::to_string(width_) + "x" + std::to_string(height_) + " image");
    }
    if (server_.part_widths() != std::vector<std::size_t>{k * cw_}) {
      throw ShapeError("monolithic: server must read a single part of width k*client_width");
    }
    mask_.assign(first_.in() * first_.out(), 0);
    for (std::size_t limb = 0; limb < k; ++limb) {
      const ShardSpec& s = specs_[limb];
      for (std::size_t y = 0; y < height_; ++y)
        for (std::size_t x = s.col_start; x < s.col_end; ++x)
          for (std::size_t j = 0; j < cw_; ++j) mask_[(y * width_ + x) * first_.out() + limb * cw_ + j] = 1;
    }
  }

  Layer first_;
  std::vector<ShardSpec> specs_;
  std::size_t width_, height_, cw_;
  ServerModel server_;
  HeadModel head_;
  std::vector<std::uint8_t> mask_;
};

/// Embeds limb layers (limb i over band specs[i]) into the block-structured
/// first layer.
inline MonolithicModel assemble(std::span<const LimbModel> limbs, std::span<const ShardSpec> specs, std::size_t width,
                                std::size_t height, const ServerModel& server, const HeadModel& head) {
  if (limbs.empty() || limbs.size() != specs.size()) throw ShapeError("assemble: need one band per limb");
  const std::size_t cw = limbs.front().width();
  for (std::size_t i = 0; i < limbs.size(); ++i) {
    const ShardSpec& s = specs[i];
    if (s.col_end > width || s.col_start >= s.col_end) throw ShapeError("assemble: band outside the image");
    if (limbs[i].width() != cw) throw ShapeError("assemble: limbs differ in client width");
    if (limbs[i].input_dim() != s.band_width() * height) {
      throw ShapeError("assemble: limb " + std::to_string(i) + " input " + std::to_string(limbs[i].input_dim()) +
                       " does not match its band of " + std::to_string(s.band_width() * height) + " pixels");
    }
  }
  std::vector<bool> covered(width, false);
  for (const auto& s : specs) {
    for (std::size_t x = s.col_start; x < s.col_end; ++x) {
      if (covered[x]) throw ShapeError("assemble: bands overlap");
      covered[x] = true;
    }
  }
  if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
    throw ShapeError("assemble: bands do not cover the image");
  }
  if (server.part_widths() != std::vector<std::size_t>(limbs.size(), cw)) {
    throw ShapeError("assemble: server parts do not match the limbs");
  }
  const std::size_t k = limbs.size();
  Layer first(width * height, k * cw);
  for (std::size_t i = 0; i < k; ++i) {
    const ShardSpec& s = specs[i];
    const std::size_t bw = s.band_width();
    const Layer& l = limbs[i].layer();
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = s.col_start; x < s.col_end; ++x)
        for (std::size_t j = 0; j < cw; ++j)
          first.weights()(y * width + x, i * cw + j) = l.weights()(y * bw + (x - s.col_start), j);
    for (std::size_t j = 0; j < cw; ++j) first.bias()[i * cw + j] = l.bias()[j];
  }
  ServerModel joined(server.hidden(), {k * cw});
  return MonolithicModel(std::move(first), std::vector<ShardSpec>(specs.begin(), specs.end()), width, height, cw,
                         std::move(joined), head);
}

/// Rebuilds full flattened images from aligned shard sets (one per limb).
inline LabeledShardSet assemble_images(std::span<const LabeledShardSet> sets) {
  if (sets.empty()) throw std::invalid_argument("assemble_images: no shard sets");
  const auto& first = sets.front();
  const std::size_t w = first.image_width, h = first.image_height, n = first.size();
  std::vector<bool> covered(w, false);
  for (const auto& s : sets) {
    if (s.sample_ids != first.sample_ids) throw std::invalid_argument("assemble_images: shard sets are not aligned");
    if (s.image_width != w || s.image_height != h) throw ShapeError("assemble_images: image sizes differ");
    for (std::size_t x = s.spec.col_start; x < s.spec.col_end; ++x) {
      if (covered.at(x)) throw ShapeError("assemble_images: bands overlap");
      covered[x] = true;
    }
  }
  if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
    throw ShapeError("assemble_images: bands do not cover the image");
  }
  LabeledShardSet out;
  out.spec = ShardSpec{1, 0, 0, w};
  out.image_width = w;
  out.image_height = h;
  out.sample_ids = first.sample_ids;
  out.features = Tensor(n, w * h);
  for (const auto& s : sets) {
    if (s.labels) out.labels = s.labels;
    const std::size_t bw = s.spec.band_width();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = s.spec.col_start; x < s.spec.col_end; ++x)
          out.features(r, y * w + x) = s.features(r, y * bw + (x - s.spec.col_start));
  }
  if (!out.labels) throw std::invalid_argument("assemble_images: no shard set carries labels");
  return out;
}

struct MonolithicRun {
  TrainTrace trace;
  MonolithicModel model;
};

/// Centralized training with the split session's initial parameters, batch
/// permutations, evaluation batching and trace format. `data` is indexed by
/// limb and has the same layout as for run_training().
inline MonolithicRun train_monolithic(const TrainConfig& cfg, const std::vector<LimbData>& data) {
  cfg.validate();
  if (data.size() != cfg.k) throw std::invalid_argument("train_monolithic: need one data set per limb");
  std::vector<LimbModel> limbs;
  std::vector<ShardSpec> specs;
  std::vector<LabeledShardSet> train_parts, test_parts;
  for (std::size_t i = 0; i < cfg.k; ++i) {
    limbs.push_back(LimbModel::initial(cfg, i, data[i].train.shard_dim()));
    specs.push_back(data[i].train.spec);
    train_parts.push_back(data[i].train);
    test_parts.push_back(data[i].test);
  }
  const LabeledShardSet train = assemble_images(train_parts);
  const LabeledShardSet test = assemble_images(test_parts);
  MonolithicModel model = assemble(limbs, specs, train.image_width, train.image_height, ServerModel::initial(cfg),
                                   HeadModel::initial(cfg));
  const float lr = cfg.learning_rate();
  const std::size_t n = train.size(), b = cfg.batch_size;

  auto snapshot = [&](StepRecord& rec) {
    for (std::size_t i = 0; i < cfg.k; ++i) rec.checksums[limb_component(i)] = model.extract_limb(i).checksum();
    rec.checksums[kHiddenComponent] = model.server().checksum();
    rec.checksums[kHeadComponent] = model.head().checksum();
  };
  auto eval = [&](const LabeledShardSet& set) {
    EvalAccumulator acc;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < set.size(); start += b) {
      rows.clear();
      for (std::size_t r = start; r < std::min(set.size(), start + b); ++r) rows.push_back(r);
      acc.add(model.infer(gather_rows(set.features, rows)), gather_labels(*set.labels, rows));
    }
    return acc;
  };

  TrainTrace trace;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = epoch_permutation(cfg.seed, epoch, n);
    const auto count = static_cast<std::uint32_t>(batch_count(n, b));
    for (std::uint32_t bi = 0; bi < count; ++bi) {
      const std::span<const std::size_t> rows(perm.data() + bi * b, std::min(b, n - bi * b));
      StepRecord rec{epoch, bi, model.train_step(gather_rows(train.features, rows), gather_labels(*train.labels, rows), lr),
                     {}};
      snapshot(rec);
      trace.steps.push_back(std::move(rec));
    }
    const auto tr = eval(train), te = eval(test);
    trace.epochs.push_back(EpochRecord{epoch, tr.loss(), tr.accuracy(), te.loss(), te.accuracy()});
  }
  return {std::move(trace), std::move(model)};
}

struct EquivalenceCheck {
  RunResult split;
  MonolithicRun monolithic;
  TraceComparison report;
};

/// Trains the split system over loopback and the masked monolithic network
/// from the same configuration and compares the traces. A failed split run
/// rethrows its root cause.
inline EquivalenceCheck check_equivalence(const TrainConfig& cfg, const std::vector<LimbData>& data, double tol = 0.0,
                                          const RunOptions& opts = {}) {
  RunResult split = run_training(cfg, data, opts);
  if (!split.ok()) std::rethrow_exception(split.error);
  EquivalenceCheck c{std::move(split), train_monolithic(cfg, data), {}};
  c.report = compare_traces(c.split.trace, c.monolithic.trace, tol);
  return c;
}

}  // namespace splitlimb
