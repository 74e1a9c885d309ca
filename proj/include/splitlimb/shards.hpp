#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitlimb/image.hpp"
#include "splitlimb/matrix.hpp"
#include "splitlimb/rng.hpp"

namespace splitlimb {

/// Column band [col_start, col_end) of the canonical image owned by one limb.
struct ShardSpec {
  std::size_t limb_count = 1;
  std::size_t limb_index = 0;
  std::size_t col_start = 0;
  std::size_t col_end = 0;

  std::size_t band_width() const noexcept { return col_end - col_start; }
  bool operator==(const ShardSpec&) const = default;
};

/// Balanced band b of k over `width` columns: [floor(b*w/k), floor((b+1)*w/k)).
inline ShardSpec balanced_band(std::size_t width, std::size_t k, std::size_t band) {
  if (k == 0) throw std::invalid_argument("balanced_band: limb count must be at least 1");
  if (k > width) {
    throw std::invalid_argument("balanced_band: " + std::to_string(k) + " limbs exceed image width " +
                                std::to_string(width));
  }
  if (band >= k) throw std::invalid_argument("balanced_band: band index out of range");
  return {k, band, band * width / k, (band + 1) * width / k};
}

/// Shard specs for all limbs. `band_order[i]` names the band limb i receives;
/// empty means identity.
inline std::vector<ShardSpec> shard_specs(std::size_t width, std::size_t k,
                                          const std::vector<std::size_t>& band_order = {}) {
  if (k == 0) throw std::invalid_argument("shard_specs: limb count must be at least 1");
  if (!band_order.empty() && band_order.size() != k) {
    throw std::invalid_argument("shard_specs: band_order length differs from limb count");
  }
  std::vector<ShardSpec> specs;
  std::vector<bool> used(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t band = band_order.empty() ? i : band_order.at(i);
    if (band >= k || used[band]) throw std::invalid_argument("shard_specs: band_order is not a permutation");
    used[band] = true;
    ShardSpec s = balanced_band(width, k, band);
    s.limb_index = i;
    specs.push_back(s);
  }
  return specs;
}

/// Columns of `spec` flattened row-major within the band.
inline std::vector<float> extract_shard(const GrayImage& img, const ShardSpec& spec) {
  if (spec.col_end > img.width || spec.col_start >= spec.col_end) {
    throw std::invalid_argument("extract_shard: band outside image");
  }
  std::vector<float> out;
  out.reserve(spec.band_width() * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    const float* row = img.pixels.data() + y * img.width;
    out.insert(out.end(), row + spec.col_start, row + spec.col_end);
  }
  return out;
}

/// Splits into k balanced column bands, left to right.
inline std::vector<std::vector<float>> vertical_split(const GrayImage& img, std::size_t k) {
  std::vector<std::vector<float>> out;
  for (const auto& spec : shard_specs(img.width, k)) out.push_back(extract_shard(img, spec));
  return out;
}

/// Inverse of vertical_split for any set of specs covering the width.
inline GrayImage reassemble(const std::vector<std::vector<float>>& shards, const std::vector<ShardSpec>& specs,
                            std::size_t width, std::size_t height) {
  if (shards.size() != specs.size()) throw std::invalid_argument("reassemble: shard/spec count mismatch");
  GrayImage img(width, height);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const auto& s = specs[i];
    if (shards[i].size() != s.band_width() * height) throw std::invalid_argument("reassemble: shard size mismatch");
    for (std::size_t y = 0; y < height; ++y) {
      std::copy_n(shards[i].begin() + static_cast<std::ptrdiff_t>(y * s.band_width()), s.band_width(),
                  img.pixels.begin() + static_cast<std::ptrdiff_t>(y * width + s.col_start));
    }
  }
  return img;
}

/// Whole images with labels (0 = healthy, 1 = tumorous) and stable ids.
struct LabeledImages {
  std::vector<GrayImage> images;
  std::vector<int> labels;
  std::vector<std::uint64_t> sample_ids;

  std::size_t size() const noexcept { return images.size(); }
};

/// One limb's view of a vertically partitioned data set. Every limb of a
/// session holds the same sample_ids in the same order; only the label holder
/// carries labels.
struct LabeledShardSet {
  ShardSpec spec;
  std::size_t image_width = 0;
  std::size_t image_height = 0;
  std::vector<std::uint64_t> sample_ids;
  Matrix<float> features;                 // [n x shard_dim]
  std::optional<std::vector<int>> labels;  // present only on the label holder

  std::size_t size() const noexcept { return sample_ids.size(); }
  std::size_t shard_dim() const noexcept { return spec.band_width() * image_height; }

  LabeledShardSet subset(const std::vector<std::size_t>& rows) const {
    LabeledShardSet out;
    out.spec = spec;
    out.image_width = image_width;
    out.image_height = image_height;
    out.features = Matrix<float>(rows.size(), features.cols());
    if (labels) out.labels.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.sample_ids.push_back(sample_ids.at(rows[i]));
      std::copy(features.row(rows[i]).begin(), features.row(rows[i]).end(), out.features.row(i).begin());
      if (labels) out.labels->push_back(labels->at(rows[i]));
    }
    return out;
  }

  bool operator==(const LabeledShardSet&) const = default;
};

/// Vertical partition of a data set. Limb 0 is the label holder.
inline std::vector<LabeledShardSet> shard_dataset(const LabeledImages& data, std::size_t k,
                                                  const std::vector<std::size_t>& band_order = {}) {
  if (data.images.empty()) throw std::invalid_argument("shard_dataset: empty data set");
  const std::size_t w = data.images.front().width, h = data.images.front().height;
  const auto specs = shard_specs(w, k, band_order);
  std::vector<LabeledShardSet> out;
  for (const auto& spec : specs) {
    LabeledShardSet s;
    s.spec = spec;
    s.image_width = w;
    s.image_height = h;
    s.sample_ids = data.sample_ids;
    s.features = Matrix<float>(data.size(), spec.band_width() * h);
    for (std::size_t n = 0; n < data.size(); ++n) {
      const auto& img = data.images[n];
      if (img.width != w || img.height != h) throw std::invalid_argument("shard_dataset: images differ in size");
      const auto shard = extract_shard(img, spec);
      std::copy(shard.begin(), shard.end(), s.features.row(n).begin());
    }
    if (spec.limb_index == 0) s.labels = data.labels;
    out.push_back(std::move(s));
  }
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Deterministic shuffled split of n positions. The train side takes
/// floor(n * fraction + 1e-9) positions (the epsilon absorbs binary rounding of
/// fractions like 0.29); both sides come back in ascending order.
inline SplitIndices split_indices(std::size_t n, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_train_test: fraction must lie strictly between 0 and 1");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("split_train_test: " + std::to_string(n) + " samples at fraction " +
                                std::to_string(train_fraction) + " leave one side empty");
  }
  auto perm = permutation(n, rng);
  SplitIndices out{{perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train)},
                   {perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end()}};
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Split keyed only by the (shared) sample ordering, so every limb of a
/// session obtains the same partition from the same seed.
inline std::pair<LabeledShardSet, LabeledShardSet> split_train_test(const LabeledShardSet& set, double train_fraction,
                                                                    std::uint64_t seed) {
  Rng rng(seed);
  const auto idx = split_indices(set.size(), train_fraction, rng);
  return {set.subset(idx.train), set.subset(idx.test)};
}

// ---------------------------------------------------------------------------
// Shard archive: <dir>/manifest.tsv plus one raw little-endian f32 vector per
// sample. Manifest comment lines carry the shard geometry.

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shard_file_name(std::uint64_t id) {
  std::ostringstream os;
  os.width(8);
  os.fill('0');
  os << id;
  return os.str() + ".f32";
}

inline void write_archive(const std::filesystem::path& dir, const LabeledShardSet& set) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ArchiveError("cannot create archive directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!manifest) throw ArchiveError("cannot write " + (dir / "manifest.tsv").string());
  manifest << "# splitlimb shard archive v1\n"
           << "# limb_count=" << set.spec.limb_count << "\n"
           << "# limb_index=" << set.spec.limb_index << "\n"
           << "# col_start=" << set.spec.col_start << "\n"
           << "# col_end=" << set.spec.col_end << "\n"
           << "# image_width=" << set.image_width << "\n"
           << "# image_height=" << set.image_height << "\n"
           << "sample_id\tlabel\tfile\n";
  for (std::size_t n = 0; n < set.size(); ++n) {
    const std::string file = shard_file_name(set.sample_ids[n]);
    manifest << set.sample_ids[n] << '\t';
    if (set.labels) {
      manifest << set.labels->at(n);
    } else {
      manifest << '-';
    }
    manifest << '\t' << file << '\n';
    std::ofstream blob(dir / file, std::ios::binary | std::ios::trunc);
    const auto row = set.features.row(n);
    blob.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size_bytes()));
    if (!blob) throw ArchiveError("cannot write " + (dir / file).string());
  }
  if (!manifest) throw ArchiveError("failed writing manifest in " + dir.string());
}

inline LabeledShardSet read_archive(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw ArchiveError("cannot open " + (dir / "manifest.tsv").string());
  std::map<std::string, std::size_t> meta;
  std::string line;
  struct Row {
    std::uint64_t id;
    std::optional<int> label;
    std::string file;
  };
  std::vector<Row> rows;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        const std::string key = line.substr(2, eq - 2);
        meta[key] = static_cast<std::size_t>(std::stoull(line.substr(eq + 1)));
      }
      continue;
    }
    if (!header_seen) {
      if (line != "sample_id\tlabel\tfile") throw ArchiveError("manifest header missing in " + dir.string());
      header_seen = true;
      continue;
    }
    std::istringstream is(line);
    std::string id, label, file;
    if (!std::getline(is, id, '\t') || !std::getline(is, label, '\t') || !std::getline(is, file)) {
      throw ArchiveError("malformed manifest line " + std::to_string(line_no) + " in " + dir.string());
    }
    Row r{std::stoull(id), std::nullopt, file};
    if (label != "-") {
      if (label != "0" && label != "1") {
        throw ArchiveError("label '" + label + "' on manifest line " + std::to_string(line_no) + " is not 0 or 1");
      }
      r.label = label == "1" ? 1 : 0;
    }
    rows.push_back(std::move(r));
  }
  for (const char* key : {"limb_count", "limb_index", "col_start", "col_end", "image_width", "image_height"}) {
    if (!meta.count(key)) throw ArchiveError(std::string("manifest lacks '") + key + "' in " + dir.string());
  }
  LabeledShardSet set;
  set.spec = {meta["limb_count"], meta["limb_index"], meta["col_start"], meta["col_end"]};
  set.image_width = meta["image_width"];
  set.image_height = meta["image_height"];
  if (set.spec.col_end <= set.spec.col_start || set.spec.col_end > set.image_width) {
    throw ArchiveError("manifest band is outside the image in " + dir.string());
  }
  const std::size_t dim = set.shard_dim();
  set.features = Matrix<float>(rows.size(), dim);
  const bool labelled = !rows.empty() && rows.front().label.has_value();
  if (labelled) set.labels.emplace();
  for (std::size_t n = 0; n < rows.size(); ++n) {
    if (rows[n].label.has_value() != labelled) throw ArchiveError("manifest mixes labelled and unlabelled rows");
    set.sample_ids.push_back(rows[n].id);
    if (labelled) set.labels->push_back(*rows[n].label);
    std::ifstream blob(dir / rows[n].file, std::ios::binary);
    auto row = set.features.row(n);
    blob.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size_bytes()));
    if (!blob || blob.peek() != std::char_traits<char>::eof()) {
      throw ArchiveError("shard file " + rows[n].file + " does not hold exactly " + std::to_string(dim) + " floats");
    }
  }
  return set;
}

}  // namespace splitlimb
