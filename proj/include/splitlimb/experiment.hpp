#pragma once

#include <algorithm>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitlimb/checksum.hpp"
#include "splitlimb/config.hpp"
#include "splitlimb/image.hpp"
#include "splitlimb/models.hpp"
#include "splitlimb/shards.hpp"
#include "splitlimb/synth.hpp"
#include "splitlimb/trace.hpp"

namespace splitlimb {

/// Bad input data (as opposed to a bad configuration value).
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Data sources

/// Archive directory of limb i under an output root.
inline std::filesystem::path limb_archive_dir(const std::filesystem::path& root, std::size_t limb) {
  return root / ("limb" + std::to_string(limb));
}

/// Per-limb shard sets for an experiment: synthesized, or read from archives
/// and checked against the configuration.
inline std::vector<LabeledShardSet> load_shard_sets(const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  if (cfg.data_source == DataSourceKind::Synthetic) {
    return shard_dataset(synth_dataset(cfg.synth_seed, cfg.synth_n, tc.image_size), tc.k, tc.band_order);
  }
  std::vector<LabeledShardSet> sets;
  for (std::size_t i = 0; i < tc.k; ++i) {
    auto set = read_archive(cfg.archives.at(i));
    const auto expected = balanced_band(tc.image_size, tc.k, tc.band_of(i));
    if (set.image_width != tc.image_size || set.image_height != tc.image_size) {
      throw ConfigError("data.archives", cfg.archives[i] + " holds " + std::to_string(set.image_width) + "x" +
                                             std::to_string(set.image_height) + " images, config says image_size " +
                                             std::to_string(tc.image_size));
    }
    if (set.spec.limb_count != tc.k || set.spec.col_start != expected.col_start || set.spec.col_end != expected.col_end) {
      throw ConfigError("data.archives", cfg.archives[i] + " is not the band of limb " + std::to_string(i));
    }
    if (!sets.empty() && set.sample_ids != sets.front().sample_ids) {
      throw ConfigError("data.archives", cfg.archives[i] + " is not aligned with " + cfg.archives.front());
    }
    set.spec.limb_index = i;
    sets.push_back(std::move(set));
  }
  if (!sets.front().labels) throw ConfigError("data.archives", cfg.archives.front() + " carries no labels");
  return sets;
}

/// Reads every *.pgm in `dir`, labelled by a TSV of `file<TAB>label` lines,
/// and resizes each to size x size. Sample ids follow file-name order.
/// Every problem is reported by file name in a single DataError.
inline LabeledImages load_labeled_pgms(const std::filesystem::path& dir, const std::filesystem::path& labels_tsv,
                                       std::size_t size) {
  std::map<std::string, int> labels;
  {
    std::ifstream in(labels_tsv);
    if (!in) throw DataError("cannot read label file " + labels_tsv.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      const std::string name = line.substr(0, tab);
      const std::string value = tab == std::string::npos ? "" : line.substr(tab + 1);
      if (line_no == 1 && value == "label") continue;  // header
      if (value != "0" && value != "1") {
        throw DataError(labels_tsv.string() + ":" + std::to_string(line_no) + ": label for '" + name + "' must be 0 or 1");
      }
      if (!labels.emplace(name, value == "1").second) {
        throw DataError(labels_tsv.string() + ":" + std::to_string(line_no) + ": duplicate entry for '" + name + "'");
      }
    }
  }

  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  if (ec) throw DataError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .pgm files in " + dir.string());

  LabeledImages out;
  std::vector<std::string> problems;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    auto label = labels.find(name);
    if (label == labels.end()) {
      problems.push_back(name + ": missing label");
      continue;
    }
    try {
      const GrayImage img = load_pgm(read_bytes(f));
      out.images.push_back(img.width == size && img.height == size ? img : resize_bilinear(img, size, size));
      out.labels.push_back(label->second);
      out.sample_ids.push_back(out.sample_ids.size());
    } catch (const std::exception& e) {
      problems.push_back(name + ": " + e.what());
    }
    labels.erase(label);
  }
  for (const auto& [name, _] : labels) problems.push_back(name + ": labelled but no such image");
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " problem(s) in " + dir.string() + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter snapshots: one little-endian f32 file per tensor plus index.tsv
//   component  tensor  rows  cols  file  fnv1a64(file bytes)

struct SnapshotEntry {
  std::string component;
  std::string tensor;  // "weights" or "bias"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string file;
  std::uint64_t hash = 0;
};

inline void write_snapshot(const std::filesystem::path& dir, const std::vector<std::pair<std::string, const Layer*>>& layers) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream index;
  index << "component\ttensor\trows\tcols\tfile\tfnv1a64\n";
  for (const auto& [name, layer] : layers) {
    auto emit = [&](const char* tensor, std::size_t rows, std::size_t cols, std::span<const float> values) {
      const std::string file = name + "." + tensor + ".f32";
      const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes());
      write_bytes(dir / file, bytes);
      Fnv1a64 h;
      h.update(bytes);
      index << name << '\t' << tensor << '\t' << rows << '\t' << cols << '\t' << file << '\t' << trace_detail::hex(h.value(), 16)
            << '\n';
    };
    emit("weights", layer->in(), layer->out(), layer->weights().values());
    emit("bias", 1, layer->out(), layer->bias());
  }
  const std::string text = index.str();
  write_bytes(dir / "index.tsv", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Reads the layers listed in one or more snapshot directories, verifying
/// every file against its recorded shape and hash.
inline std::map<std::string, Layer> read_snapshot(const std::vector<std::filesystem::path>& dirs) {
  std::map<std::string, Layer> out;
  std::map<std::string, std::pair<std::optional<Tensor>, std::optional<std::vector<float>>>> parts;
  for (const auto& dir : dirs) {
    std::ifstream in(dir / "index.tsv");
    if (!in) throw DataError("cannot read " + (dir / "index.tsv").string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      SnapshotEntry e;
      std::string hash;
      if (!(fields >> e.component >> e.tensor >> e.rows >> e.cols >> e.file >> hash)) {
        throw DataError((dir / "index.tsv").string() + ": malformed line '" + line + "'");
      }
      const auto bytes = read_bytes(dir / e.file);
      Fnv1a64 h;
      h.update(bytes);
      if (trace_detail::hex(h.value(), 16) != hash) throw DataError((dir / e.file).string() + ": checksum mismatch");
      if (bytes.size() != e.rows * e.cols * sizeof(float)) throw DataError((dir / e.file).string() + ": wrong size");
      std::vector<float> values(e.rows * e.cols);
      std::memcpy(values.data(), bytes.data(), bytes.size());
      auto& slot = parts[e.component];
      if (e.tensor == "weights") {
        slot.first = Tensor(e.rows, e.cols, std::move(values));
      } else if (e.tensor == "bias") {
        slot.second = std::move(values);
      } else {
        throw DataError((dir / "index.tsv").string() + ": unknown tensor '" + e.tensor + "'");
      }
    }
  }
  for (auto& [name, p] : parts) {
    if (!p.first || !p.second) throw DataError("snapshot component '" + name + "' is incomplete");
    out.emplace(name, Layer(std::move(*p.first), std::move(*p.second)));
  }
  return out;
}

}  // namespace splitlimb
