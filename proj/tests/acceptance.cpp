// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Optional arguments select criteria by number, e.g. `acceptance 1 5`.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fuzz.hpp"
#include "gradcheck.hpp"
#include "splitlimb/splitlimb.hpp"

using namespace splitlimb;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<LimbData> synthetic(const TrainConfig& cfg, std::uint64_t data_seed, std::size_t n) {
  return split_limb_sets(shard_dataset(synth_dataset(data_seed, n, cfg.image_size), cfg.k, cfg.band_order), cfg);
}

TrainConfig base_config(std::size_t k, std::uint32_t epochs) {
  TrainConfig cfg;
  cfg.k = static_cast<std::uint32_t>(k);
  cfg.topology = k == 1 ? Topology::Vanilla : Topology::Vertical;
  cfg.epochs = epochs;
  return cfg;
}

std::size_t count_labels(const std::vector<Message>& msgs) {
  return static_cast<std::size_t>(
      std::count_if(msgs.begin(), msgs.end(), [](const Message& m) { return std::holds_alternative<Labels>(m); }));
}

// 1 ------------------------------------------------------------------------
Outcome oracle_equivalence() {
  Outcome o{true, ""};
  for (std::size_t k : {2, 1, 4}) {
    const auto t0 = Clock::now();
    const TrainConfig cfg = base_config(k, 10);
    const auto c = check_equivalence(cfg, synthetic(cfg, 7, 256), 0.0);
    const double secs = seconds_since(t0);
    const bool ok = c.report.pass && c.report.steps_compared > 0 && (k != 2 || secs < 60.0);
    o.pass = o.pass && ok;
    o.detail += fmt("k=%zu %s %zu steps bit-exact %.1fs; ", k, ok ? "ok" : "FAILED", c.report.steps_compared, secs);
  }
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome topology_equivalence() {
  Outcome o{true, ""};
  for (std::size_t k : {1, 2, 3}) {
    TrainConfig v = base_config(k, 5);
    if (k == 1) v.topology = Topology::Vertical;
    TrainConfig u = v;
    u.topology = Topology::UShaped;
    RunOptions opts;
    opts.record_transcript = true;
    const auto rv = run_training(v, synthetic(v, 7, 256), opts);
    const auto ru = run_training(u, synthetic(u, 7, 256), opts);
    if (!rv.ok()) std::rethrow_exception(rv.error);
    if (!ru.ok()) std::rethrow_exception(ru.error);
    std::size_t u_labels = count_labels(ru.transcript);
    for (const auto& sent : ru.limb_sent) u_labels += count_labels(sent);
    const bool same = rv.trace.final_checksums() == ru.trace.final_checksums() && !rv.trace.final_checksums().empty();
    const bool ok = same && u_labels == 0 && count_labels(rv.transcript) > 0;
    o.pass = o.pass && ok;
    o.detail += fmt("k=%zu checksums %s, u-shaped Labels %zu; ", k, same ? "equal" : "DIFFER", u_labels);
  }
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome gradient_suite() {
  Outcome o{true, ""};
  int cases = 0;
  double worst = 0.0;
  for (const auto& s : gradcheck::full_suite(40, 2024)) {
    o.pass = o.pass && s.ok();
    cases += s.cases;
    worst = std::max(worst, s.max_rel);
    if (!s.ok()) o.detail += s.name + " failed; ";
  }
  o.pass = o.pass && cases >= 100;
  o.detail += fmt("%d cases, max relative error %.2e (limit %.0e)", cases, worst, gradcheck::kTolerance);
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome transport_transparency() {
  const auto t0 = Clock::now();
  TrainConfig cfg = base_config(3, 10);
  const auto data = synthetic(cfg, 7, 256);
  RunOptions loop;
  RunOptions tcp;
  tcp.transport = TransportKind::Tcp;
  const auto a = run_training(cfg, data, loop);
  const auto b = run_training(cfg, data, tcp);
  if (!a.ok()) std::rethrow_exception(a.error);
  if (!b.ok()) std::rethrow_exception(b.error);
  const double secs = seconds_since(t0);
  const auto cmp = compare_traces(a.trace, b.trace, 0.0);
  const bool identical = a.trace == b.trace && cmp.pass;
  return {identical && secs < 120.0,
          fmt("k=3, %zu steps, traces %s, %.1fs", cmp.steps_compared, identical ? "identical" : "DIFFER", secs)};
}

// 5 ------------------------------------------------------------------------
Outcome protocol_robustness() {
  const auto frames = fuzz::frame_byte_flips(2000, 99);
  std::size_t cases = 0, rejected = 0;
  bool ok = frames.ok();
  const std::vector<std::pair<Topology, std::size_t>> shapes{
      {Topology::Vanilla, 1}, {Topology::Vertical, 2}, {Topology::Vertical, 3}, {Topology::UShaped, 2}};
  std::string first_failure = frames.failures.empty() ? "" : frames.failures.front();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto [topo, k] = shapes[i];
    const auto transcript = fuzz::session_transcript(topo, k, 2, 40, 11 + i);
    const auto st = fuzz::transcript_mutations(transcript, topo, k, 400, 500 + i);
    ok = ok && st.ok();
    cases += st.cases;
    rejected += st.rejected;
    if (first_failure.empty() && !st.failures.empty()) first_failure = st.failures.front();
  }
  ok = ok && frames.cases >= 1000 && cases >= 1000;
  auto d = fmt("frame flips %zu/%zu classified, transcript mutations %zu/%zu rejected", frames.classified,
               frames.cases, rejected, cases);
  if (!first_failure.empty()) d += "; first failure: " + first_failure;
  return {ok, d};
}

// 6 ------------------------------------------------------------------------
Outcome learning_sanity() {
  const auto t0 = Clock::now();
  int good = 0;
  std::string d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg = base_config(2, 120);
    cfg.seed = seed;
    RunOptions opts;
    opts.step_checksums = false;
    const auto r = run_training(cfg, synthetic(cfg, seed, 2000), opts);
    if (!r.ok()) std::rethrow_exception(r.error);
    const auto& last = r.trace.epochs.back();
    const bool ok = last.train_accuracy >= 0.90 && last.test_accuracy >= 0.70;
    good += ok;
    d += fmt("seed %llu train %.3f test %.3f%s; ", static_cast<unsigned long long>(seed), last.train_accuracy,
             last.test_accuracy, ok ? "" : " (below)");
  }
  const double secs = seconds_since(t0);
  d += fmt("%d/5 seeds meet 0.90/0.70, %.0fs", good, secs);
  return {good >= 4 && secs < 600.0, d};
}

// 7 ------------------------------------------------------------------------
Outcome data_pipeline() {
  Rng rng(77);
  std::size_t exact = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t w = 5 + rng.below(120), h = 1 + rng.below(120);
    GrayImage img(w, h);
    for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
    for (std::size_t k = 1; k <= 5; ++k) {
      ++total;
      const auto back = reassemble(vertical_split(img, k), shard_specs(w, k), w, h);
      exact += back.pixels == img.pixels;
    }
  }

  std::size_t pgm_same = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t w = 1 + rng.below(64), h = 1 + rng.below(64);
    std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::size_t p = 0; p < w * h; ++p) bytes.push_back(static_cast<std::uint8_t>(rng.below(256)));
    pgm_same += save_pgm(load_pgm(bytes)) == bytes;
  }

  const fs::path dir = fs::temp_directory_path() / ("splitlimb-acceptance-" + std::to_string(::getpid()));
  const auto sets = shard_dataset(synth_dataset(5, 200, 100), 3);
  bool aligned = true;
  for (std::size_t i = 0; i < sets.size(); ++i) write_archive(dir / ("limb" + std::to_string(i)), sets[i]);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto back = read_archive(dir / ("limb" + std::to_string(i)));
    aligned = aligned && back == sets[i] && back.sample_ids == sets[0].sample_ids;
  }
  fs::remove_all(dir);

  return {exact == total && pgm_same == 100 && aligned,
          fmt("reassembly %zu/%zu exact, PGM %zu/100 byte-identical, archives %s", exact, total, pgm_same,
              aligned ? "aligned" : "NOT aligned")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"topology equivalence", topology_equivalence},
      {"gradient suite", gradient_suite},
      {"transport transparency", transport_transparency},
      {"protocol robustness", protocol_robustness},
      {"learning sanity", learning_sanity},
      {"data pipeline", data_pipeline},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%zu] %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
