#pragma once

#include <algorithm>
#include <bit>
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
#include <vector>

namespace splitlimb {

struct StepRecord {
  std::uint32_t epoch = 0;
  std::uint32_t batch = 0;
  std::optional<float> loss;                      // known only to the party owning the head
  std::map<std::string, std::uint64_t> checksums;  // component -> FNV-1a after the update

  bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  float train_loss = 0.0f;
  double train_accuracy = 0.0;
  float test_loss = 0.0f;
  double test_accuracy = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

/// Deterministic record of a run: one entry per training step, one per epoch.
struct TrainTrace {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  bool operator==(const TrainTrace&) const = default;

  std::map<std::string, std::uint64_t> final_checksums() const {
    return steps.empty() ? std::map<std::string, std::uint64_t>{} : steps.back().checksums;
  }
};

/// Combines the partial traces of the parties of one session. Steps are
/// matched by position and must agree on (epoch, batch).
inline TrainTrace merge_traces(const std::vector<TrainTrace>& parts) {
  TrainTrace out;
  for (const auto& p : parts) {
    if (p.steps.size() > out.steps.size()) out.steps.resize(p.steps.size());
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
      auto& dst = out.steps[i];
      const auto& src = p.steps[i];
      if (!dst.checksums.empty() || dst.loss) {
        if (dst.epoch != src.epoch || dst.batch != src.batch) {
          throw std::invalid_argument("merge_traces: parties disagree on step " + std::to_string(i));
        }
      }
      dst.epoch = src.epoch;
      dst.batch = src.batch;
      if (src.loss) dst.loss = src.loss;
      dst.checksums.insert(src.checksums.begin(), src.checksums.end());
    }
    if (p.epochs.size() > out.epochs.size()) out.epochs = p.epochs;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text form. Floats are stored as their bit patterns (exact) next to a
// decimal rendering for humans.
//
//   # splitlimb trace v1
//   S <epoch> <batch> <loss_bits|-> <loss> <component>=<hex>,...
//   E <epoch> <train_loss_bits> <train_acc_bits> <test_loss_bits> <test_acc_bits> <train_acc> <test_acc>

namespace trace_detail {

inline std::string hex(std::uint64_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*llx", width, static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace trace_detail

inline void write_trace(std::ostream& os, const TrainTrace& t) {
  using trace_detail::hex;
  os << "# splitlimb trace v1\n";
  for (const auto& s : t.steps) {
    os << "S\t" << s.epoch << '\t' << s.batch << '\t';
    if (s.loss) {
      os << hex(std::bit_cast<std::uint32_t>(*s.loss), 8) << '\t' << *s.loss;
    } else {
      os << "-\t-";
    }
    os << '\t';
    bool first = true;
    for (const auto& [name, sum] : s.checksums) {
      os << (first ? "" : ",") << name << '=' << hex(sum, 16);
      first = false;
    }
    os << '\n';
  }
  for (const auto& e : t.epochs) {
    os << "E\t" << e.epoch << '\t' << hex(std::bit_cast<std::uint32_t>(e.train_loss), 8) << '\t'
       << hex(std::bit_cast<std::uint64_t>(e.train_accuracy), 16) << '\t'
       << hex(std::bit_cast<std::uint32_t>(e.test_loss), 8) << '\t'
       << hex(std::bit_cast<std::uint64_t>(e.test_accuracy), 16) << '\t' << e.train_accuracy << '\t'
       << e.test_accuracy << '\n';
  }
}

inline TrainTrace read_trace(std::istream& is) {
  using trace_detail::parse_hex;
  TrainTrace t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, '\t');) f.push_back(cell);
    if (f[0] == "S" && f.size() >= 5) {
      StepRecord s;
      s.epoch = static_cast<std::uint32_t>(std::stoul(f[1]));
      s.batch = static_cast<std::uint32_t>(std::stoul(f[2]));
      if (f[3] != "-") s.loss = std::bit_cast<float>(static_cast<std::uint32_t>(parse_hex(f[3])));
      if (f.size() >= 6) {
        std::istringstream cs(f[5]);
        for (std::string kv; std::getline(cs, kv, ',');) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw std::invalid_argument("trace: bad checksum entry '" + kv + "'");
          s.checksums[kv.substr(0, eq)] = parse_hex(kv.substr(eq + 1));
        }
      }
      t.steps.push_back(std::move(s));
    } else if (f[0] == "E" && f.size() >= 6) {
      EpochRecord e;
      e.epoch = static_cast<std::uint32_t>(std::stoul(f[1]));
      e.train_loss = std::bit_cast<float>(static_cast<std::uint32_t>(parse_hex(f[2])));
      e.train_accuracy = std::bit_cast<double>(parse_hex(f[3]));
      e.test_loss = std::bit_cast<float>(static_cast<std::uint32_t>(parse_hex(f[4])));
      e.test_accuracy = std::bit_cast<double>(parse_hex(f[5]));
      t.epochs.push_back(e);
    } else {
      throw std::invalid_argument("trace: unrecognised line '" + line + "'");
    }
  }
  return t;
}

inline void save_trace(const std::filesystem::path& path, const TrainTrace& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_trace(os, t);
}

inline TrainTrace load_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot read " + path.string());
  return read_trace(is);
}

/// Metrics CSV with the frozen header `epoch,split,loss,accuracy`.
inline void write_metrics_csv(std::ostream& os, const TrainTrace& t) {
  os << "epoch,split,loss,accuracy\n";
  char buf[128];
  for (const auto& e : t.epochs) {
    std::snprintf(buf, sizeof buf, "%u,train,%.9g,%.6f\n", e.epoch, static_cast<double>(e.train_loss), e.train_accuracy);
    os << buf;
    std::snprintf(buf, sizeof buf, "%u,test,%.9g,%.6f\n", e.epoch, static_cast<double>(e.test_loss), e.test_accuracy);
    os << buf;
  }
}

// ---------------------------------------------------------------------------

struct ComponentMatch {
  std::string component;
  std::size_t matched = 0;
  std::size_t compared = 0;
  std::optional<std::size_t> first_mismatch;
};

struct TraceComparison {
  bool pass = false;
  double tolerance = 0.0;
  std::size_t steps_a = 0;
  std::size_t steps_b = 0;
  std::size_t epochs_a = 0;
  std::size_t epochs_b = 0;
  std::size_t steps_compared = 0;
  double max_abs_loss_diff = 0.0;
  double max_abs_metric_diff = 0.0;
  std::optional<std::size_t> first_divergence;  // step index
  std::vector<ComponentMatch> checksums;

  bool length_mismatch() const noexcept { return steps_a != steps_b || epochs_a != epochs_b; }
};

/// Step-by-step comparison. Passes iff lengths agree, every loss and epoch
/// metric differs by at most `tol`, and (at tol = 0) every shared parameter
/// checksum matches. Mismatched lengths are reported, not thrown.
inline TraceComparison compare_traces(const TrainTrace& a, const TrainTrace& b, double tol) {
  TraceComparison r;
  r.tolerance = tol;
  r.steps_a = a.steps.size();
  r.steps_b = b.steps.size();
  r.epochs_a = a.epochs.size();
  r.epochs_b = b.epochs.size();
  const std::size_t n = std::min(a.steps.size(), b.steps.size());
  r.steps_compared = n;
  std::map<std::string, ComponentMatch> comp;
  bool ok = !r.length_mismatch();
  auto diverge = [&](std::size_t i) {
    if (!r.first_divergence) r.first_divergence = i;
    ok = false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sa = a.steps[i];
    const auto& sb = b.steps[i];
    if (sa.epoch != sb.epoch || sa.batch != sb.batch || sa.loss.has_value() != sb.loss.has_value()) {
      diverge(i);
    } else if (sa.loss) {
      const double d = std::fabs(static_cast<double>(*sa.loss) - static_cast<double>(*sb.loss));
      const bool same_bits = std::bit_cast<std::uint32_t>(*sa.loss) == std::bit_cast<std::uint32_t>(*sb.loss);
      if (!std::isnan(d)) r.max_abs_loss_diff = std::max(r.max_abs_loss_diff, d);
      if (tol == 0.0 ? !same_bits : !(d <= tol)) diverge(i);
    }
    for (const auto& [name, sum] : sa.checksums) {
      auto it = sb.checksums.find(name);
      if (it == sb.checksums.end()) continue;
      auto& c = comp[name];
      c.component = name;
      ++c.compared;
      if (it->second == sum) {
        ++c.matched;
      } else {
        if (!c.first_mismatch) c.first_mismatch = i;
        if (tol == 0.0) diverge(i);
      }
    }
  }
  if (r.steps_a != r.steps_b && !r.first_divergence) r.first_divergence = n;
  for (std::size_t i = 0; i < std::min(a.epochs.size(), b.epochs.size()); ++i) {
    const auto& ea = a.epochs[i];
    const auto& eb = b.epochs[i];
    const double diffs[] = {std::fabs(static_cast<double>(ea.train_loss) - eb.train_loss),
                            std::fabs(ea.train_accuracy - eb.train_accuracy),
                            std::fabs(static_cast<double>(ea.test_loss) - eb.test_loss),
                            std::fabs(ea.test_accuracy - eb.test_accuracy)};
    for (double d : diffs) {
      r.max_abs_metric_diff = std::max(r.max_abs_metric_diff, d);
      if (!(d <= tol)) ok = false;
    }
    if (ea.epoch != eb.epoch) ok = false;
  }
  for (auto& [_, c] : comp) r.checksums.push_back(c);
  r.pass = ok;
  return r;
}

inline std::string format_report(const TraceComparison& r) {
  std::ostringstream os;
  os << "trace comparison (tolerance " << r.tolerance << "): " << (r.pass ? "PASS" : "FAIL") << "\n"
     << "  steps: " << r.steps_a << " vs " << r.steps_b << ", epochs: " << r.epochs_a << " vs " << r.epochs_b
     << (r.length_mismatch() ? "  (length mismatch)" : "") << "\n"
     << "  max |loss diff|: " << r.max_abs_loss_diff << "\n"
     << "  max |epoch metric diff|: " << r.max_abs_metric_diff << "\n"
     << "  first divergence: ";
  if (r.first_divergence) {
    os << "step " << *r.first_divergence << "\n";
  } else {
    os << "none\n";
  }
  os << "  checksums:\n";
  for (const auto& c : r.checksums) {
    os << "    " << c.component << ": " << c.matched << "/" << c.compared << " match";
    if (c.first_mismatch) os << " (first mismatch at step " << *c.first_mismatch << ")";
    os << "\n";
  }
  return os.str();
}

inline std::string format_report_tsv(const TraceComparison& r) {
  std::ostringstream os;
  os << "key\tvalue\n"
     << "pass\t" << (r.pass ? 1 : 0) << "\n"
     << "tolerance\t" << r.tolerance << "\n"
     << "steps_a\t" << r.steps_a << "\nsteps_b\t" << r.steps_b << "\n"
     << "epochs_a\t" << r.epochs_a << "\nepochs_b\t" << r.epochs_b << "\n"
     << "max_abs_loss_diff\t" << r.max_abs_loss_diff << "\n"
     << "max_abs_metric_diff\t" << r.max_abs_metric_diff << "\n"
     << "first_divergence\t" << (r.first_divergence ? std::to_string(*r.first_divergence) : "-") << "\n";
  for (const auto& c : r.checksums) {
    os << "checksum." << c.component << "\t" << c.matched << "/" << c.compared << "\n";
  }
  return os.str();
}

}  // namespace splitlimb
