#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "splitlimb/image.hpp"
#include "splitlimb/rng.hpp"
#include "splitlimb/shards.hpp"

namespace splitlimb {

inline constexpr std::uint64_t kSynthStreamTag = 0x53594E5448ull;  // "SYNTH"

/// Synthetic stand-in for a two-class brain MRI set.
///
/// Every sample is a radial "head" phantom with random centre, radius and
/// brightness plus uniform noise. Odd sample ids (label 1) additionally carry
/// a bright, soft-edged, rotated ellipse inside the head. Sample j is drawn
/// from its own stream derive_seed(seed, {tag, j}), so any subset can be
/// regenerated independently.
inline GrayImage synth_image(std::uint64_t seed, std::uint64_t sample_id, bool tumor, std::size_t size) {
  Rng rng(derive_seed(seed, {kSynthStreamTag, sample_id}));
  const double s = static_cast<double>(size);
  const double cx = s * (0.5 + rng.uniform(-0.04, 0.04));
  const double cy = s * (0.5 + rng.uniform(-0.04, 0.04));
  const double radius = s * rng.uniform(0.36, 0.44);
  const double brightness = rng.uniform(0.40, 0.60);
  const double falloff = rng.uniform(0.4, 0.7);

  // Tumour parameters are drawn for both classes so the stream layout does
  // not depend on the label.
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dist = radius * 0.55 * std::sqrt(rng.uniform());
  const double tx = cx + dist * std::cos(angle);
  const double ty = cy + dist * std::sin(angle);
  const double ax = s * rng.uniform(0.07, 0.13);
  const double ay = s * rng.uniform(0.07, 0.13);
  const double rot = rng.uniform(0.0, std::numbers::pi);
  const double intensity = rng.uniform(0.30, 0.45);
  const double cr = std::cos(rot), sr = std::sin(rot);

  GrayImage img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double d = std::hypot(px - cx, py - cy) / radius;
      double v = d < 1.0 ? brightness * (1.0 - falloff * d * d) : 0.04;
      if (tumor) {
        const double u = ((px - tx) * cr + (py - ty) * sr) / ax;
        const double w = (-(px - tx) * sr + (py - ty) * cr) / ay;
        const double q = u * u + w * w;
        if (q < 1.0) v += intensity * (1.0 - q);
      }
      v += rng.uniform(-0.06, 0.06);
      img.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

/// n samples with ids 0..n-1; label = id mod 2, so classes differ by at most one.
inline LabeledImages synth_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size) {
  if (n < 2) throw std::invalid_argument("synth_dataset: need at least 2 samples");
  if (image_size < 8) throw std::invalid_argument("synth_dataset: image size must be at least 8");
  LabeledImages out;
  for (std::size_t j = 0; j < n; ++j) {
    const int label = static_cast<int>(j % 2);
    out.images.push_back(synth_image(seed, j, label == 1, image_size));
    out.labels.push_back(label);
    out.sample_ids.push_back(j);
  }
  return out;
}

}  // namespace splitlimb
