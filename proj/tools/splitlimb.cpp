// splitlimb: operator entry point.
//
//   splitlimb synth --n N --k K --seed S [--image-size P] --out DIR
//   splitlimb partition --images DIR --labels TSV --k K [--image-size P] --out DIR
//   splitlimb train --config FILE [--role all|server|limb] [--limb I] [--out DIR] [--server HOST:PORT]
//   splitlimb evaluate --config FILE --params DIR... [--split train|test]
//   splitlimb compare-oracle --config FILE [--tolerance T] [--perturb-lr] [--out DIR]
//   splitlimb trace merge --out FILE PART...
//   splitlimb trace compare A B [--tolerance T]
//
// Exit codes: 0 ok, 2 validation, 3 protocol violation, 4 transport failure,
// 5 oracle mismatch, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "splitlimb/experiment.hpp"
#include "splitlimb/oracle.hpp"
#include "splitlimb/parties.hpp"

namespace fs = std::filesystem;
using namespace splitlimb;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kValidation = 2, kProtocol = 3, kTransport = 4, kMismatch = 5 };

enum class LogLevel { Error, Info, Debug };

LogLevel log_level() {
  const char* v = std::getenv("SPLITLIMB_LOG");
  const std::string s = v ? v : "info";
  if (s == "error") return LogLevel::Error;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void log(LogLevel level, const std::string& msg) {
  static const LogLevel threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

void info(const std::string& m) { log(LogLevel::Info, m); }
void debug(const std::string& m) { log(LogLevel::Debug, m); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string metrics_csv(const TrainTrace& t) {
  std::ostringstream os;
  write_metrics_csv(os, t);
  return os.str();
}

void write_archives(const fs::path& out, const std::vector<LabeledShardSet>& sets) {
  for (std::size_t i = 0; i < sets.size(); ++i) {
    write_archive(limb_archive_dir(out, i), sets[i]);
    info("wrote " + limb_archive_dir(out, i).string() + " (" + std::to_string(sets[i].size()) + " shards, columns " +
         std::to_string(sets[i].spec.col_start) + ".." + std::to_string(sets[i].spec.col_end) + ")");
  }
}

void log_epochs(const TrainTrace& t) {
  for (const auto& e : t.epochs) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %u: train loss %.4f acc %.4f | test loss %.4f acc %.4f", e.epoch,
                  static_cast<double>(e.train_loss), e.train_accuracy, static_cast<double>(e.test_loss),
                  e.test_accuracy);
    debug(buf);
  }
  if (!t.epochs.empty()) {
    const auto& e = t.epochs.back();
    char buf[120];
    std::snprintf(buf, sizeof buf, "final: train acc %.4f, test acc %.4f", e.train_accuracy, e.test_accuracy);
    info(buf);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t image_size = 100;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  if (a.k == 0) throw ConfigError("k", "must be at least 1");
  if (a.k > a.image_size) throw ConfigError("k", "exceeds image width " + std::to_string(a.image_size));
  write_archives(a.out, shard_dataset(synth_dataset(a.seed, a.n, a.image_size), a.k, {}));
  return kOk;
}

struct PartitionArgs {
  std::string images;
  std::string labels;
  std::size_t k = 0;
  std::size_t image_size = 100;
  std::string out;
};

int cmd_partition(const PartitionArgs& a) {
  if (a.k == 0) throw ConfigError("k", "must be at least 1");
  if (a.k > a.image_size) throw ConfigError("k", "exceeds image width " + std::to_string(a.image_size));
  const LabeledImages data = load_labeled_pgms(a.images, a.labels, a.image_size);
  info("read " + std::to_string(data.images.size()) + " images");
  write_archives(a.out, shard_dataset(data, a.k, {}));
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string role = "all";
  std::size_t limb = 0;
  std::string out;
  std::string server;
};

ExperimentConfig load_config(const std::string& path, const std::string& out, const std::string& server) {
  ExperimentConfig cfg = load_experiment(path);
  if (!out.empty()) cfg.output_dir = out;
  if (!server.empty()) cfg.server_address = parse_address(server);
  debug("config digest " + trace_detail::hex(cfg.train.digest(), 16));
  return cfg;
}

std::vector<std::pair<std::string, const Layer*>> limb_layers(const LimbModel& m, std::size_t i,
                                                               const std::optional<HeadModel>& head) {
  std::vector<std::pair<std::string, const Layer*>> out{{limb_component(i), &m.layer()}};
  if (head) out.emplace_back(kHeadComponent, &head->layer());
  return out;
}

int train_all(const ExperimentConfig& cfg) {
  const auto data = split_limb_sets(load_shard_sets(cfg), cfg.train);
  RunOptions opts;
  opts.transport = cfg.transport;
  opts.timeout = Millis{cfg.timeout_ms};
  info("training " + std::to_string(cfg.train.k) + " limb(s), " + to_string(cfg.train.topology) + ", " +
       std::to_string(cfg.train.epochs) + " epochs");
  RunResult r = run_training(cfg.train, data, opts);
  if (!r.ok()) std::rethrow_exception(r.error);
  log_epochs(r.trace);

  const fs::path out = cfg.output_dir;
  write_text(out / "metrics.csv", metrics_csv(r.trace));
  save_trace(out / "trace.txt", r.trace);
  std::vector<std::pair<std::string, const Layer*>> layers;
  for (std::size_t i = 0; i < r.limbs.size(); ++i) layers.emplace_back(limb_component(i), &r.limbs[i].layer());
  layers.emplace_back(kHiddenComponent, &r.server.hidden());
  layers.emplace_back(kHeadComponent, &r.head->layer());
  write_snapshot(out / "params", layers);
  info("artifacts in " + out.string());
  return kOk;
}

int train_server(const ExperimentConfig& cfg) {
  const Millis timeout{cfg.timeout_ms};
  TcpListener listener(cfg.server_address);
  info("server listening on port " + std::to_string(listener.port()) + " for " + std::to_string(cfg.train.k) +
       " limb(s)");
  std::vector<std::unique_ptr<Channel>> channels;
  for (std::size_t i = 0; i < cfg.train.k; ++i) channels.push_back(listener.accept(timeout));
  ServerParty server(cfg.train, std::move(channels), timeout);
  server.run();
  log_epochs(server.trace());

  const fs::path out = cfg.output_dir;
  if (!server.trace().epochs.empty()) write_text(out / "metrics.csv", metrics_csv(server.trace()));
  save_trace(out / "trace-server.txt", server.trace());
  std::vector<std::pair<std::string, const Layer*>> layers{{kHiddenComponent, &server.model().hidden()}};
  if (server.head()) layers.emplace_back(kHeadComponent, &server.head()->layer());
  write_snapshot(out / "params-server", layers);
  return kOk;
}

int train_limb(const ExperimentConfig& cfg, std::size_t limb) {
  if (limb >= cfg.train.k) throw ConfigError("limb", "index " + std::to_string(limb) + " out of range");
  const Millis timeout{cfg.timeout_ms};
  auto sets = load_shard_sets(cfg);
  auto [train, test] = split_train_test(sets.at(limb), cfg.train.train_fraction, split_seed(cfg.train.seed));
  auto channel = tcp_connect(cfg.server_address, timeout);
  info("limb " + std::to_string(limb) + " connected");
  LimbParty party(cfg.train, limb, std::move(train), std::move(test), std::move(channel), timeout);
  party.run();

  const fs::path out = cfg.output_dir;
  const std::string name = limb_component(limb);
  save_trace(out / ("trace-" + name + ".txt"), party.trace());
  write_snapshot(out / ("params-" + name), limb_layers(party.model(), limb, party.head()));
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_config(a.config, a.out, a.server);
  if (a.role == "all") return train_all(cfg);
  if (a.role == "server") return train_server(cfg);
  return train_limb(cfg, a.limb);
}

struct EvaluateArgs {
  std::string config;
  std::vector<std::string> params;
  std::string split = "test";
};

int cmd_evaluate(const EvaluateArgs& a) {
  const ExperimentConfig cfg = load_experiment(a.config);
  const TrainConfig& tc = cfg.train;
  std::vector<fs::path> dirs(a.params.begin(), a.params.end());
  auto layers = read_snapshot(dirs);
  auto take = [&](const std::string& name) {
    auto it = layers.find(name);
    if (it == layers.end()) throw DataError("snapshot has no component '" + name + "'");
    return it->second;
  };
  std::vector<LimbModel> limbs;
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < tc.k; ++i) {
    limbs.emplace_back(take(limb_component(i)));
    widths.push_back(limbs.back().layer().out());
  }
  const ServerModel server(take(kHiddenComponent), widths);
  const HeadModel head(take(kHeadComponent));

  const auto data = split_limb_sets(load_shard_sets(cfg), tc);
  std::vector<LabeledShardSet> sets;
  for (const auto& d : data) sets.push_back(a.split == "train" ? d.train : d.test);
  const EvalAccumulator acc = evaluate(limbs, server, head, sets, tc.batch_size);
  std::printf("split,loss,accuracy\n%s,%.9g,%.6f\n", a.split.c_str(), static_cast<double>(acc.loss()), acc.accuracy());
  return kOk;
}

struct OracleArgs {
  std::string config;
  double tolerance = 0.0;
  bool perturb_lr = false;
  std::string out;
};

int cmd_compare_oracle(const OracleArgs& a) {
  const ExperimentConfig cfg = load_config(a.config, a.out, "");
  const auto data = split_limb_sets(load_shard_sets(cfg), cfg.train);
  RunOptions opts;
  opts.timeout = Millis{cfg.timeout_ms};
  if (a.perturb_lr) {
    // One party believes in a slightly different learning rate.
    TrainConfig skewed = cfg.train;
    skewed.lr = std::nextafter(skewed.lr, 1.0);
    opts.limb_config_override.resize(cfg.train.k);
    opts.limb_config_override.back() = skewed;
  }
  info("running split and monolithic training, " + std::to_string(cfg.train.k) + " limb(s)");
  const EquivalenceCheck c = check_equivalence(cfg.train, data, a.tolerance, opts);

  const fs::path out = cfg.output_dir;
  const std::string report = format_report(c.report);
  write_text(out / "oracle-report.txt", report);
  write_text(out / "oracle-report.tsv", format_report_tsv(c.report));
  save_trace(out / "trace-split.txt", c.split.trace);
  save_trace(out / "trace-monolithic.txt", c.monolithic.trace);
  std::cout << report;
  return c.report.pass ? kOk : kMismatch;
}

struct TraceArgs {
  std::vector<std::string> parts;
  std::string out;
  std::string a, b;
  double tolerance = 0.0;
};

int cmd_trace_merge(const TraceArgs& a) {
  std::vector<TrainTrace> parts;
  for (const auto& p : a.parts) parts.push_back(load_trace(p));
  save_trace(a.out, merge_traces(parts));
  return kOk;
}

int cmd_trace_compare(const TraceArgs& a) {
  const auto r = compare_traces(load_trace(a.a), load_trace(a.b), a.tolerance);
  std::cout << format_report(r);
  return r.pass ? kOk : kMismatch;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ProtocolViolation& e) {
    log(LogLevel::Error, std::string("protocol violation: ") + e.what());
    return kProtocol;
  } catch (const DecodeError& e) {
    log(LogLevel::Error, std::string("protocol violation: ") + e.what());
    return kProtocol;
  } catch (const TransportError& e) {
    log(LogLevel::Error, std::string("transport failure: ") + e.what());
    return kTransport;
  } catch (const ConfigError& e) {
    log(LogLevel::Error, std::string("invalid configuration: ") + e.what());
    return kValidation;
  } catch (const std::invalid_argument& e) {
    log(LogLevel::Error, std::string("invalid input: ") + e.what());
    return kValidation;
  } catch (const ArchiveError& e) {
    log(LogLevel::Error, std::string("invalid input: ") + e.what());
    return kValidation;
  } catch (const PgmError& e) {
    log(LogLevel::Error, std::string("invalid input: ") + e.what());
    return kValidation;
  } catch (const fs::filesystem_error& e) {
    log(LogLevel::Error, e.what());
    return kValidation;
  } catch (const std::exception& e) {
    log(LogLevel::Error, e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-limb split learning on vertically partitioned images"};
  app.require_subcommand(1);
  int rc = kOk;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic data set and write one shard archive per limb");
  s->add_option("--n", synth.n, "Number of images")->required();
  s->add_option("--k", synth.k, "Number of limbs")->required();
  s->add_option("--seed", synth.seed, "Generator seed")->required();
  s->add_option("--image-size", synth.image_size, "Side length in pixels")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->callback([&] { rc = guarded([&] { return cmd_synth(synth); }); });

  PartitionArgs part;
  auto* p = app.add_subcommand("partition", "Split a directory of labelled PGM images into shard archives");
  p->add_option("--images", part.images, "Directory of .pgm files")->required();
  p->add_option("--labels", part.labels, "TSV of file<TAB>label")->required();
  p->add_option("--k", part.k, "Number of limbs")->required();
  p->add_option("--image-size", part.image_size, "Side length after resizing")->capture_default_str();
  p->add_option("--out", part.out, "Output directory")->required();
  p->callback([&] { rc = guarded([&] { return cmd_partition(part); }); });

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run a training session");
  t->add_option("--config", train.config, "Experiment file")->required();
  t->add_option("--role", train.role, "Which party to run")
      ->check(CLI::IsMember({"all", "server", "limb"}))
      ->capture_default_str();
  t->add_option("--limb", train.limb, "Limb index for --role limb");
  t->add_option("--out", train.out, "Override output.dir");
  t->add_option("--server", train.server, "Override transport.server");
  t->callback([&] { rc = guarded([&] { return cmd_train(train); }); });

  EvaluateArgs eval;
  auto* e = app.add_subcommand("evaluate", "Evaluate a parameter snapshot");
  e->add_option("--config", eval.config, "Experiment file")->required();
  e->add_option("--params", eval.params, "Snapshot directories")->required();
  e->add_option("--split", eval.split, "Which split")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  e->callback([&] { rc = guarded([&] { return cmd_evaluate(eval); }); });

  OracleArgs oracle;
  auto* o = app.add_subcommand("compare-oracle", "Check split training against the masked monolithic model");
  o->add_option("--config", oracle.config, "Experiment file")->required();
  o->add_option("--tolerance", oracle.tolerance, "Absolute tolerance")->capture_default_str();
  o->add_flag("--perturb-lr", oracle.perturb_lr, "Give one limb a different learning rate");
  o->add_option("--out", oracle.out, "Override output.dir");
  o->callback([&] { rc = guarded([&] { return cmd_compare_oracle(oracle); }); });

  TraceArgs tr;
  auto* tc = app.add_subcommand("trace", "Trace utilities");
  tc->require_subcommand(1);
  auto* tm = tc->add_subcommand("merge", "Merge per-party traces");
  tm->add_option("--out", tr.out, "Merged trace file")->required();
  tm->add_option("parts", tr.parts, "Trace files")->required();
  tm->callback([&] { rc = guarded([&] { return cmd_trace_merge(tr); }); });
  auto* tq = tc->add_subcommand("compare", "Compare two traces");
  tq->add_option("a", tr.a, "First trace")->required();
  tq->add_option("b", tr.b, "Second trace")->required();
  tq->add_option("--tolerance", tr.tolerance, "Absolute tolerance")->capture_default_str();
  tq->callback([&] { rc = guarded([&] { return cmd_trace_compare(tr); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kValidation;
  }
  return rc;
}
