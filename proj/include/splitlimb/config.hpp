#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "splitlimb/checksum.hpp"
#include "splitlimb/rng.hpp"
#include "splitlimb/transport.hpp"
#include "splitlimb/wire.hpp"

namespace splitlimb {

/// Invalid configuration; field() names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& detail)
      : std::invalid_argument("config: " + field + ": " + detail), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline Topology parse_topology(const std::string& s) {
  if (s == "vanilla") return Topology::Vanilla;
  if (s == "vertical") return Topology::Vertical;
  if (s == "ushaped" || s == "u-shaped") return Topology::UShaped;
  throw ConfigError("topology", "unknown topology '" + s + "' (vanilla, vertical, ushaped)");
}

struct TrainConfig {
  std::uint64_t seed = 1;
  std::uint32_t epochs = 120;
  std::uint32_t batch_size = 32;
  double lr = 0.01;
  std::uint32_t client_width = 128;
  std::uint32_t server_width = 64;
  Topology topology = Topology::Vertical;
  std::uint32_t k = 2;
  std::uint32_t image_size = 100;
  double train_fraction = 0.8;
  std::vector<std::size_t> band_order;  // empty: limb i owns band i

  float learning_rate() const noexcept { return static_cast<float>(lr); }

  std::size_t band_of(std::size_t limb) const { return band_order.empty() ? limb : band_order.at(limb); }

  void validate() const {
    auto positive = [](const char* field, auto v) {
      if (v <= 0) throw ConfigError(field, "must be positive");
    };
    positive("epochs", epochs);
    positive("batch_size", batch_size);
    positive("client_width", client_width);
    positive("server_width", server_width);
    positive("k", k);
    positive("image_size", image_size);
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be a positive finite number");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction", "must lie in (0, 1)");
    if (topology == Topology::Vanilla && k != 1) throw ConfigError("k", "vanilla topology requires k = 1");
    if (k > image_size) throw ConfigError("k", "more limbs than image columns");
    if (k > 64) throw ConfigError("k", "at most 64 limbs");
    if (!band_order.empty()) {
      if (band_order.size() != k) throw ConfigError("band_order", "must list one band per limb");
      std::vector<bool> seen(k, false);
      for (auto b : band_order) {
        if (b >= k || seen[b]) throw ConfigError("band_order", "must be a permutation of 0..k-1");
        seen[b] = true;
      }
    }
  }

  /// Sorted key=value lines; floats as C99 hex literals so the text is exact.
  std::string canonical() const {
    auto hex = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%a", v);
      return std::string(buf);
    };
    std::ostringstream os;
    os << "band_order=";
    for (std::size_t i = 0; i < k; ++i) os << (i ? "," : "") << band_of(i);
    os << "\nbatch_size=" << batch_size << "\nclient_width=" << client_width << "\nepochs=" << epochs
       << "\nimage_size=" << image_size << "\nk=" << k << "\nlr=" << hex(lr) << "\nseed=" << seed
       << "\nserver_width=" << server_width << "\ntopology=" << to_string(topology)
       << "\ntrain_fraction=" << hex(train_fraction) << "\n";
    return os.str();
  }

  std::uint64_t digest() const { return fnv1a64(canonical()); }
};

// Stream tags for seed derivation.
namespace seed_tags {
inline constexpr std::uint64_t kPermutation = 0x5045524Dull;  // "PERM"
inline constexpr std::uint64_t kSplit = 0x53504C54ull;        // "SPLT"
inline constexpr std::uint64_t kLimb = 0x4C494D42ull;         // "LIMB"
inline constexpr std::uint64_t kHidden = 0x48494444ull;       // "HIDD"
inline constexpr std::uint64_t kHead = 0x48454144ull;         // "HEAD"
}  // namespace seed_tags

/// Training order for one epoch: a permutation of [0, n) keyed by (seed, epoch).
inline std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint32_t epoch, std::size_t n) {
  Rng rng(derive_seed(seed, {seed_tags::kPermutation, epoch}));
  return permutation(n, rng);
}

inline std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, {seed_tags::kSplit}); }

// ---------------------------------------------------------------------------
// Minimal TOML reader: [tables], key = value, integers, floats, strings,
// booleans and one-line arrays. Enough for experiment files.

struct TomlValue {
  std::variant<std::int64_t, double, std::string, bool, std::vector<TomlValue>> v;
};

using TomlTable = std::map<std::string, TomlValue>;  // keys are "table.key"

namespace toml_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline TomlValue parse_value(const std::string& text, const std::string& key) {
  if (text.empty()) throw ConfigError(key, "missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError(key, "unterminated string");
    return {text.substr(1, text.size() - 2)};
  }
  if (text == "true") return {true};
  if (text == "false") return {false};
  if (text.front() == '[') {
    if (text.back() != ']') throw ConfigError(key, "unterminated array");
    std::vector<TomlValue> items;
    std::string body = trim(text.substr(1, text.size() - 2));
    std::string cur;
    bool in_str = false;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!trim(cur).empty()) items.push_back(parse_value(trim(cur), key));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) items.push_back(parse_value(trim(cur), key));
    return {std::move(items)};
  }
  std::string num;
  for (char c : text)
    if (c != '_') num += c;
  std::size_t used = 0;
  try {
    if (num.find_first_of(".eE") == std::string::npos || num.rfind("0x", 0) == 0) {
      const long long i = std::stoll(num, &used, 0);
      if (used == num.size()) return {static_cast<std::int64_t>(i)};
    } else {
      const double d = std::stod(num, &used);
      if (used == num.size()) return {d};
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "cannot parse value '" + text + "'");
}

}  // namespace toml_detail

inline TomlTable parse_toml(const std::string& text) {
  TomlTable out;
  std::istringstream in(text);
  std::string line, table;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = toml_detail::trim(toml_detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no), "malformed table header");
      table = toml_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected key = value");
    const std::string key = (table.empty() ? "" : table + ".") + toml_detail::trim(line.substr(0, eq));
    if (out.count(key)) throw ConfigError(key, "duplicate key");
    out[key] = toml_detail::parse_value(toml_detail::trim(line.substr(eq + 1)), key);
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class DataSourceKind { Synthetic, Archive };
enum class TransportKind { Loopback, Tcp };

struct ExperimentConfig {
  TrainConfig train;
  DataSourceKind data_source = DataSourceKind::Synthetic;
  std::size_t synth_n = 256;
  std::uint64_t synth_seed = 7;
  std::vector<std::string> archives;  // one shard archive directory per limb
  TransportKind transport = TransportKind::Loopback;
  Address server_address{"127.0.0.1", kDefaultPort};
  std::uint32_t timeout_ms = static_cast<std::uint32_t>(kDefaultTimeout.count());
  std::string output_dir = "splitlimb-out";

  void validate() const {
    train.validate();
    if (data_source == DataSourceKind::Synthetic && synth_n < 2) throw ConfigError("data.n", "need at least 2 samples");
    if (data_source == DataSourceKind::Archive && archives.size() != train.k) {
      throw ConfigError("data.archives", "need one archive per limb (" + std::to_string(train.k) + ")");
    }
    if (timeout_ms == 0) throw ConfigError("transport.timeout_ms", "must be positive");
  }
};

namespace config_detail {

template <typename T>
T get_int(const TomlTable& t, const std::string& key, T fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  const auto* i = std::get_if<std::int64_t>(&it->second.v);
  if (!i) throw ConfigError(key, "expected an integer");
  if (*i < 0) throw ConfigError(key, "must not be negative");
  if (static_cast<std::uint64_t>(*i) > std::numeric_limits<T>::max()) throw ConfigError(key, "out of range");
  return static_cast<T>(*i);
}

inline double get_float(const TomlTable& t, const std::string& key, double fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const auto* d = std::get_if<double>(&it->second.v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&it->second.v)) return static_cast<double>(*i);
  throw ConfigError(key, "expected a number");
}

inline std::string get_string(const TomlTable& t, const std::string& key, const std::string& fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  const auto* s = std::get_if<std::string>(&it->second.v);
  if (!s) throw ConfigError(key, "expected a string");
  return *s;
}

}  // namespace config_detail

inline ExperimentConfig parse_experiment(const std::string& text) {
  using namespace config_detail;
  const TomlTable t = parse_toml(text);
  static const std::vector<std::string> known = {
      "seed",        "epochs",      "batch_size",     "lr",          "client_width",        "server_width",
      "topology",    "k",           "image_size",     "train_fraction", "band_order",       "data.source",
      "data.n",      "data.seed",   "data.archives",  "transport.kind", "transport.server", "transport.timeout_ms",
      "output.dir"};
  for (const auto& [key, _] : t) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key, "unknown key");
  }
  ExperimentConfig c;
  TrainConfig& tr = c.train;
  tr.seed = get_int<std::uint64_t>(t, "seed", tr.seed);
  tr.epochs = get_int<std::uint32_t>(t, "epochs", tr.epochs);
  tr.batch_size = get_int<std::uint32_t>(t, "batch_size", tr.batch_size);
  tr.lr = get_float(t, "lr", tr.lr);
  tr.client_width = get_int<std::uint32_t>(t, "client_width", tr.client_width);
  tr.server_width = get_int<std::uint32_t>(t, "server_width", tr.server_width);
  tr.topology = t.count("topology") ? parse_topology(get_string(t, "topology", "")) : tr.topology;
  tr.k = get_int<std::uint32_t>(t, "k", tr.k);
  tr.image_size = get_int<std::uint32_t>(t, "image_size", tr.image_size);
  tr.train_fraction = get_float(t, "train_fraction", tr.train_fraction);
  if (auto it = t.find("band_order"); it != t.end()) {
    const auto* arr = std::get_if<std::vector<TomlValue>>(&it->second.v);
    if (!arr) throw ConfigError("band_order", "expected an array of integers");
    for (const auto& v : *arr) {
      const auto* i = std::get_if<std::int64_t>(&v.v);
      if (!i || *i < 0) throw ConfigError("band_order", "expected non-negative integers");
      tr.band_order.push_back(static_cast<std::size_t>(*i));
    }
  }

  const std::string source = get_string(t, "data.source", "synthetic");
  if (source == "synthetic") {
    c.data_source = DataSourceKind::Synthetic;
  } else if (source == "archive") {
    c.data_source = DataSourceKind::Archive;
  } else {
    throw ConfigError("data.source", "expected 'synthetic' or 'archive'");
  }
  c.synth_n = get_int<std::size_t>(t, "data.n", c.synth_n);
  c.synth_seed = get_int<std::uint64_t>(t, "data.seed", c.synth_seed);
  if (auto it = t.find("data.archives"); it != t.end()) {
    const auto* arr = std::get_if<std::vector<TomlValue>>(&it->second.v);
    if (!arr) throw ConfigError("data.archives", "expected an array of paths");
    for (const auto& v : *arr) {
      const auto* s = std::get_if<std::string>(&v.v);
      if (!s) throw ConfigError("data.archives", "expected strings");
      c.archives.push_back(*s);
    }
  }

  const std::string kind = get_string(t, "transport.kind", "loopback");
  if (kind == "loopback") {
    c.transport = TransportKind::Loopback;
  } else if (kind == "tcp") {
    c.transport = TransportKind::Tcp;
  } else {
    throw ConfigError("transport.kind", "expected 'loopback' or 'tcp'");
  }
  try {
    c.server_address = parse_address(get_string(t, "transport.server", c.server_address.str()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("transport.server", e.what());
  }
  c.timeout_ms = get_int<std::uint32_t>(t, "transport.timeout_ms", c.timeout_ms);
  c.output_dir = get_string(t, "output.dir", c.output_dir);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

}  // namespace splitlimb
