#pragma once

#include <algorithm>
#include <exception>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "splitlimb/config.hpp"
#include "splitlimb/models.hpp"
#include "splitlimb/session.hpp"
#include "splitlimb/shards.hpp"
#include "splitlimb/trace.hpp"
#include "splitlimb/transport.hpp"
#include "splitlimb/wire.hpp"

namespace splitlimb {

inline std::size_t batch_count(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

/// Rows of `features` at `rows`, in that order.
inline Tensor gather_rows(const Tensor& features, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(features.row(rows[i]).begin(), features.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

inline Tensor gather_labels(const std::vector<int>& labels, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) out(i, 0) = static_cast<float>(labels.at(rows[i]));
  return out;
}

namespace party_detail {

template <typename M>
M expect(Envelope env, std::uint64_t session_id, const char* who) {
  if (env.session_id != session_id) {
    throw ProtocolViolation(ViolationKind::DigestMismatch, std::string(who) + ": frame from a foreign session");
  }
  if (auto* m = std::get_if<M>(&env.message)) return std::move(*m);
  throw ProtocolViolation(ViolationKind::UnexpectedMessage,
                          std::string(who) + ": got " + message_name(env.message) + ", expected " +
                              message_name(static_cast<std::uint16_t>(Message(M{}).index() + 1)));
}

inline void check_hello(const Hello& h, const TrainConfig& cfg, const char* who) {
  if (h.topology != cfg.topology) {
    throw ProtocolViolation(ViolationKind::TopologyMismatch, std::string(who) + ": peer announces " +
                                                                 to_string(h.topology));
  }
  if (h.config_digest != cfg.digest()) {
    throw ProtocolViolation(ViolationKind::DigestMismatch, std::string(who) + ": peer configuration digest differs");
  }
}

}  // namespace party_detail

/// A client party: owns one shard of every sample and the first layer for it.
/// Limb 0 is the label holder and paces the session: it chooses every batch
/// and announces it. Other limbs follow the announcements relayed by the
/// server. In the u-shaped topology limb 0 also owns the classifier head.
class LimbParty {
 public:
  LimbParty(TrainConfig cfg, std::size_t limb, LabeledShardSet train, LabeledShardSet test,
            std::unique_ptr<Channel> server, Millis timeout = kDefaultTimeout)
      : cfg_(std::move(cfg)),
        limb_(limb),
        train_(std::move(train)),
        test_(std::move(test)),
        server_(std::move(server)),
        timeout_(timeout),
        session_(cfg_.digest()) {
    cfg_.validate();
    if (limb_ >= cfg_.k) throw ConfigError("limb", "index " + std::to_string(limb_) + " out of range");
    if (train_.shard_dim() != test_.shard_dim() || train_.features.cols() != train_.shard_dim()) {
      throw ShapeError("limb " + std::to_string(limb_) + ": train and test shards differ in width");
    }
    if (train_.size() == 0 || test_.size() == 0) throw std::invalid_argument("limb: empty train or test set");
    if (holder() && (!train_.labels || !test_.labels)) {
      throw std::invalid_argument("limb 0 holds the labels but its shard sets carry none");
    }
    model_ = LimbModel::initial(cfg_, limb_, train_.shard_dim());
    if (holder() && cfg_.topology == Topology::UShaped) head_ = HeadModel::initial(cfg_);
    index_ids(train_, train_rows_);
    index_ids(test_, test_rows_);
  }

  void run() {
    try {
      handshake();
      if (holder()) {
        drive();
      } else {
        follow();
      }
    } catch (...) {
      server_->close();
      throw;
    }
  }

  const TrainTrace& trace() const noexcept { return trace_; }
  const LimbModel& model() const noexcept { return model_; }
  LimbModel& model() noexcept { return model_; }
  const std::optional<HeadModel>& head() const noexcept { return head_; }
  /// Every message this limb put on the wire.
  const std::vector<Message>& sent() const noexcept { return sent_; }
  void record_sent(bool on) noexcept { record_ = on; }
  /// Per-step parameter checksums; on by default.
  void record_checksums(bool on) noexcept { checksums_ = on; }

 private:
  bool holder() const noexcept { return limb_ == 0; }
  float lr() const noexcept { return cfg_.learning_rate(); }

  static void index_ids(const LabeledShardSet& set, std::unordered_map<std::uint64_t, std::size_t>& out) {
    for (std::size_t i = 0; i < set.size(); ++i) out.emplace(set.sample_ids[i], i);
  }

  void send(const Message& m) {
    if (record_) sent_.push_back(m);
    send_message(*server_, m, session_);
  }

  template <typename M>
  M recv() {
    return party_detail::expect<M>(recv_envelope(*server_, timeout_), session_, "limb");
  }

  void handshake() {
    send(Hello{holder() ? Role::LabelHolder : Role::Limb, static_cast<std::uint16_t>(limb_), cfg_.topology,
               cfg_.digest()});
    const auto env = recv_envelope(*server_, timeout_);
    if (const auto* h = std::get_if<Hello>(&env.message)) party_detail::check_hello(*h, cfg_, "limb");
    const auto h = party_detail::expect<Hello>(env, session_, "limb");
    if (h.role != Role::Server) throw ProtocolViolation(ViolationKind::UnexpectedMessage, "limb: hello from a non-server");
  }

  std::vector<std::size_t> rows_for(const BatchMeta& m) const {
    const auto& index = m.phase == BatchPhase::EvalTest ? test_rows_ : train_rows_;
    std::vector<std::size_t> rows;
    rows.reserve(m.sample_ids.size());
    for (auto id : m.sample_ids) {
      auto it = index.find(id);
      if (it == index.end()) {
        throw ProtocolViolation(ViolationKind::BatchOutOfSequence,
                                "limb " + std::to_string(limb_) + " holds no shard for sample " + std::to_string(id));
      }
      rows.push_back(it->second);
    }
    return rows;
  }

  const LabeledShardSet& set_for(BatchPhase p) const { return p == BatchPhase::EvalTest ? test_ : train_; }

  StepRecord step_record(std::uint32_t epoch, std::uint32_t batch) const {
    StepRecord r{epoch, batch, std::nullopt, {}};
    if (!checksums_) return r;
    r.checksums[limb_component(limb_)] = model_.checksum();
    if (head_) r.checksums[kHeadComponent] = head_->checksum();
    return r;
  }

  // Label holder ------------------------------------------------------------

  void drive() {
    const std::size_t n = train_.size();
    const std::size_t b = cfg_.batch_size;
    const auto count = static_cast<std::uint32_t>(batch_count(n, b));
    for (std::uint32_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto perm = epoch_permutation(cfg_.seed, epoch, n);
      for (std::uint32_t bi = 0; bi < count; ++bi) {
        const std::span<const std::size_t> rows(perm.data() + bi * b, std::min(b, n - bi * b));
        train_step(epoch, bi, count, rows);
      }
      send(EndEpoch{epoch});
      EpochRecord e{epoch};
      const Metrics tr = eval_pass(epoch, BatchPhase::EvalTrain);
      const Metrics te = eval_pass(epoch, BatchPhase::EvalTest);
      e.train_loss = tr.loss;
      e.train_accuracy = tr.accuracy;
      e.test_loss = te.loss;
      e.test_accuracy = te.accuracy;
      trace_.epochs.push_back(e);
    }
    send(EndSession{0});
  }

  void train_step(std::uint32_t epoch, std::uint32_t bi, std::uint32_t count, std::span<const std::size_t> rows) {
    BatchMeta meta{epoch, BatchPhase::Train, bi, count, {}};
    for (auto r : rows) meta.sample_ids.push_back(train_.sample_ids[r]);
    send(meta);
    const Tensor x = gather_rows(train_.features, rows);
    const Tensor y = gather_labels(*train_.labels, rows);
    send(Smashed{static_cast<std::uint16_t>(limb_), model_.forward(x)});
    std::optional<float> loss;
    if (head_) {
      const auto acts = recv<HeadActivations>();
      if (acts.data.rows() != rows.size()) throw ProtocolViolation(ViolationKind::ShapeMismatch, "head activations");
      auto hs = head_->step(acts.data, y, lr());
      loss = hs.loss;
      send(HeadGrad{std::move(hs.grad_input)});
    } else {
      send(Labels{y});
    }
    apply_gradient();
    StepRecord rec = step_record(epoch, bi);
    rec.loss = loss;
    trace_.steps.push_back(std::move(rec));
  }

  Metrics eval_pass(std::uint32_t epoch, BatchPhase phase) {
    const LabeledShardSet& set = set_for(phase);
    const std::size_t n = set.size(), b = cfg_.batch_size;
    const auto count = static_cast<std::uint32_t>(batch_count(n, b));
    const Split split = phase == BatchPhase::EvalTrain ? Split::Train : Split::Test;
    EvalAccumulator acc;
    std::vector<std::size_t> rows;
    for (std::uint32_t bi = 0; bi < count; ++bi) {
      rows.clear();
      for (std::size_t r = bi * b; r < std::min(n, (bi + 1) * b); ++r) rows.push_back(r);
      BatchMeta meta{epoch, phase, bi, count, {}};
      for (auto r : rows) meta.sample_ids.push_back(set.sample_ids[r]);
      send(meta);
      send(Smashed{static_cast<std::uint16_t>(limb_), model_.infer(gather_rows(set.features, rows))});
      const Tensor y = gather_labels(*set.labels, rows);
      if (head_) {
        const auto acts = recv<HeadActivations>();
        acc.add(head_->infer(acts.data), y);
      } else {
        send(Labels{y});
      }
    }
    if (head_) {
      Metrics m{epoch, split, acc.loss(), acc.accuracy()};
      send(m);
      return m;
    }
    auto m = recv<Metrics>();
    if (m.split != split || m.epoch != epoch) throw ProtocolViolation(ViolationKind::UnexpectedMessage, "metrics");
    return m;
  }

  void apply_gradient() {
    const auto g = recv<SmashedGrad>();
    if (g.limb_index != limb_) throw ProtocolViolation(ViolationKind::BadLimbIndex, "gradient for another limb");
    model_.backward(g.data, lr());
  }

  // Other limbs -------------------------------------------------------------

  void follow() {
    std::optional<EpochRecord> pending;
    for (;;) {
      Envelope env = recv_envelope(*server_, timeout_);
      if (env.session_id != session_) {
        throw ProtocolViolation(ViolationKind::DigestMismatch, "limb: frame from a foreign session");
      }
      if (auto* meta = std::get_if<BatchMeta>(&env.message)) {
        const auto rows = rows_for(*meta);
        const Tensor x = gather_rows(set_for(meta->phase).features, rows);
        if (meta->phase == BatchPhase::Train) {
          send(Smashed{static_cast<std::uint16_t>(limb_), model_.forward(x)});
          apply_gradient();
          trace_.steps.push_back(step_record(meta->epoch, meta->batch_index));
        } else {
          send(Smashed{static_cast<std::uint16_t>(limb_), model_.infer(x)});
        }
      } else if (auto* m = std::get_if<Metrics>(&env.message)) {
        if (m->split == Split::Train) {
          pending = EpochRecord{m->epoch, m->loss, m->accuracy, 0.0f, 0.0};
        } else {
          if (!pending || pending->epoch != m->epoch) {
            throw ProtocolViolation(ViolationKind::UnexpectedMessage, "test metrics without train metrics");
          }
          pending->test_loss = m->loss;
          pending->test_accuracy = m->accuracy;
          trace_.epochs.push_back(*pending);
          pending.reset();
        }
      } else if (std::holds_alternative<EndEpoch>(env.message)) {
        continue;
      } else if (auto* end = std::get_if<EndSession>(&env.message)) {
        if (end->reason != 0) {
          throw ProtocolViolation(ViolationKind::UnexpectedMessage,
                                  "session aborted by peer (reason " + std::to_string(end->reason) + ")");
        }
        return;
      } else {
        throw ProtocolViolation(ViolationKind::UnexpectedMessage,
                                std::string("limb: unexpected ") + message_name(env.message));
      }
    }
  }

  TrainConfig cfg_;
  std::size_t limb_;
  LabeledShardSet train_;
  LabeledShardSet test_;
  std::unique_ptr<Channel> server_;
  Millis timeout_;
  std::uint64_t session_;
  LimbModel model_;
  std::optional<HeadModel> head_;
  std::unordered_map<std::uint64_t, std::size_t> train_rows_;
  std::unordered_map<std::uint64_t, std::size_t> test_rows_;
  TrainTrace trace_;
  bool record_ = false;
  bool checksums_ = true;
  std::vector<Message> sent_;
};

/// The split server: owns the hidden layer (and the head, except in the
/// u-shaped topology). Holds no raw data. Channels may arrive in any order;
/// the handshake maps them to limb indices.
class ServerParty {
 public:
  ServerParty(TrainConfig cfg, std::vector<std::unique_ptr<Channel>> limbs, Millis timeout = kDefaultTimeout)
      : cfg_(std::move(cfg)),
        unsorted_(std::move(limbs)),
        timeout_(timeout),
        session_(cfg_.digest()),
        state_(initial_session(cfg_.topology, cfg_.k)) {
    cfg_.validate();
    if (unsorted_.size() != cfg_.k) {
      throw std::invalid_argument("server: " + std::to_string(unsorted_.size()) + " channels for " +
                                  std::to_string(cfg_.k) + " limbs");
    }
    server_ = ServerModel::initial(cfg_);
    if (cfg_.topology != Topology::UShaped) head_ = HeadModel::initial(cfg_);
  }

  void run() {
    try {
      handshake();
      serve();
    } catch (...) {
      for (auto& ch : unsorted_)
        if (ch) ch->close();
      for (auto& ch : limbs_)
        if (ch) ch->close();
      throw;
    }
  }

  const TrainTrace& trace() const noexcept { return trace_; }
  const ServerModel& model() const noexcept { return server_; }
  const std::optional<HeadModel>& head() const noexcept { return head_; }
  const SessionState& state() const noexcept { return state_; }
  /// Every logical message of the session in the order the server saw it.
  const std::vector<Message>& transcript() const noexcept { return transcript_; }
  void record_transcript(bool on) noexcept { record_ = on; }
  void record_checksums(bool on) noexcept { checksums_ = on; }

 private:
  float lr() const noexcept { return cfg_.learning_rate(); }
  bool ushaped() const noexcept { return cfg_.topology == Topology::UShaped; }

  void observe(const Message& m) {
    state_ = step_state(std::move(state_), m);
    if (record_) transcript_.push_back(m);
  }

  template <typename M>
  M recv_from(std::size_t limb) {
    M m = party_detail::expect<M>(recv_envelope(*limbs_[limb], timeout_), session_, "server");
    observe(m);
    return m;
  }

  void send_to(std::size_t limb, const Message& m) { send_message(*limbs_[limb], m, session_); }

  // Logical message addressed to several limbs; observed once.
  void broadcast(const Message& m, std::size_t from = 0) {
    for (std::size_t i = from; i < limbs_.size(); ++i) send_to(i, m);
  }

  void handshake() {
    limbs_.resize(cfg_.k);
    std::vector<Hello> hellos(cfg_.k);
    for (auto& ch : unsorted_) {
      const auto env = recv_envelope(*ch, timeout_);
      if (const auto* h = std::get_if<Hello>(&env.message)) party_detail::check_hello(*h, cfg_, "server");
      const auto h = party_detail::expect<Hello>(env, session_, "server");
      if (h.limb_index >= cfg_.k || limbs_[h.limb_index]) {
        throw ProtocolViolation(ViolationKind::BadLimbIndex, "server: hello from limb " + std::to_string(h.limb_index));
      }
      hellos[h.limb_index] = h;
      limbs_[h.limb_index] = std::move(ch);
    }
    unsorted_.clear();
    for (const auto& h : hellos) observe(h);
    const Hello mine{Role::Server, 0, cfg_.topology, cfg_.digest()};
    broadcast(mine);
    observe(mine);
  }

  void serve() {
    for (;;) {
      Envelope env = recv_envelope(*limbs_[0], timeout_);
      if (env.session_id != session_) {
        throw ProtocolViolation(ViolationKind::DigestMismatch, "server: frame from a foreign session");
      }
      observe(env.message);
      if (auto* meta = std::get_if<BatchMeta>(&env.message)) {
        broadcast(*meta, 1);
        handle_batch(*meta);
      } else if (std::holds_alternative<EndEpoch>(env.message)) {
        broadcast(env.message, 1);
      } else if (auto* m = std::get_if<Metrics>(&env.message)) {
        broadcast(*m, 1);
        record_metrics(*m);
      } else if (std::holds_alternative<EndSession>(env.message)) {
        broadcast(env.message, 1);
        return;
      }
      // Anything else was already rejected by the session automaton.
    }
  }

  void handle_batch(const BatchMeta& meta) {
    std::vector<Tensor> parts(cfg_.k);
    for (std::size_t i = 0; i < cfg_.k; ++i) {
      auto s = recv_from<Smashed>(i);
      if (s.limb_index != i) throw ProtocolViolation(ViolationKind::BadLimbIndex, "smashed on the wrong channel");
      parts[i] = std::move(s.data);
    }
    const bool train = meta.phase == BatchPhase::Train;
    if (ushaped()) {
      Tensor acts = train ? server_.forward(parts) : server_.infer(parts);
      const HeadActivations ha{std::move(acts)};
      send_to(0, ha);
      observe(ha);
      if (!train) return;
      const auto hg = recv_from<HeadGrad>(0);
      send_gradients(server_.backward(hg.data, lr()));
      StepRecord rec{meta.epoch, meta.batch_index, std::nullopt, {}};
      if (checksums_) rec.checksums[kHiddenComponent] = server_.checksum();
      trace_.steps.push_back(std::move(rec));
      return;
    }
    const auto labels = recv_from<Labels>(0);
    if (train) {
      const Tensor acts = server_.forward(parts);
      auto hs = head_->step(acts, labels.data, lr());
      send_gradients(server_.backward(hs.grad_input, lr()));
      StepRecord rec{meta.epoch, meta.batch_index, hs.loss, {}};
      if (checksums_) {
        rec.checksums[kHiddenComponent] = server_.checksum();
        rec.checksums[kHeadComponent] = head_->checksum();
      }
      trace_.steps.push_back(std::move(rec));
      return;
    }
    if (meta.batch_index == 0) eval_ = EvalAccumulator{};
    eval_.add(head_->infer(server_.infer(parts)), labels.data);
    if (meta.batch_index + 1 == meta.batch_count) {
      const Metrics m{meta.epoch, meta.phase == BatchPhase::EvalTrain ? Split::Train : Split::Test, eval_.loss(),
                      eval_.accuracy()};
      broadcast(m);
      observe(m);
      record_metrics(m);
    }
  }

  void send_gradients(std::vector<Tensor> grads) {
    for (std::size_t i = 0; i < cfg_.k; ++i) {
      const SmashedGrad g{static_cast<std::uint16_t>(i), std::move(grads[i])};
      send_to(i, g);
      observe(g);
    }
  }

  void record_metrics(const Metrics& m) {
    if (m.split == Split::Train) {
      trace_.epochs.push_back(EpochRecord{m.epoch, m.loss, m.accuracy, 0.0f, 0.0});
    } else if (!trace_.epochs.empty()) {
      trace_.epochs.back().test_loss = m.loss;
      trace_.epochs.back().test_accuracy = m.accuracy;
    }
  }

  TrainConfig cfg_;
  std::vector<std::unique_ptr<Channel>> unsorted_;
  std::vector<std::unique_ptr<Channel>> limbs_;
  Millis timeout_;
  std::uint64_t session_;
  SessionState state_;
  ServerModel server_;
  std::optional<HeadModel> head_;
  EvalAccumulator eval_;
  TrainTrace trace_;
  bool record_ = false;
  bool checksums_ = true;
  std::vector<Message> transcript_;
};

// ---------------------------------------------------------------------------
// Single-process runs: every party on its own thread.

struct LimbData {
  LabeledShardSet train;
  LabeledShardSet test;
};

/// Splits each limb's full set with the shared, sample-keyed rule.
inline std::vector<LimbData> split_limb_sets(const std::vector<LabeledShardSet>& sets, const TrainConfig& cfg) {
  std::vector<LimbData> out;
  for (const auto& s : sets) {
    auto [train, test] = split_train_test(s, cfg.train_fraction, split_seed(cfg.seed));
    out.push_back({std::move(train), std::move(test)});
  }
  return out;
}

struct RunOptions {
  TransportKind transport = TransportKind::Loopback;
  Millis timeout = kDefaultTimeout;
  bool record_transcript = false;
  bool step_checksums = true;
  // Per-limb configuration overrides, for exercising digest checks.
  std::vector<std::optional<TrainConfig>> limb_config_override;
};

struct RunResult {
  TrainTrace trace;
  std::vector<Message> transcript;                // server's view, when recorded
  std::vector<std::vector<Message>> limb_sent;    // per limb, when recorded
  std::vector<LimbModel> limbs;
  ServerModel server;
  std::optional<HeadModel> head;
  std::exception_ptr error;                       // root cause, if the run failed
  bool ok() const noexcept { return !error; }
};

namespace party_detail {

// A transport failure is usually the echo of another party's real error.
inline bool is_transport_error(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const TransportError&) {
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace party_detail

/// Runs one complete session in this process. Errors do not escape; the
/// result carries the root cause and the partial trace.
inline RunResult run_training(const TrainConfig& cfg, const std::vector<LimbData>& data, const RunOptions& opts = {}) {
  cfg.validate();
  if (data.size() != cfg.k) throw std::invalid_argument("run_training: need one data set per limb");

  std::vector<std::unique_ptr<Channel>> server_ends;
  std::vector<std::unique_ptr<Channel>> limb_ends;
  if (opts.transport == TransportKind::Loopback) {
    for (std::size_t i = 0; i < cfg.k; ++i) {
      auto [s, l] = make_loopback_pair();
      server_ends.push_back(std::move(s));
      limb_ends.push_back(std::move(l));
    }
  } else {
    TcpListener listener(Address{"127.0.0.1", 0});
    const Address addr{"127.0.0.1", listener.port()};
    for (std::size_t i = 0; i < cfg.k; ++i) {
      limb_ends.push_back(tcp_connect(addr));
      server_ends.push_back(listener.accept(opts.timeout));
    }
  }

  std::vector<std::unique_ptr<LimbParty>> limbs;
  for (std::size_t i = 0; i < cfg.k; ++i) {
    const TrainConfig& lc =
        i < opts.limb_config_override.size() && opts.limb_config_override[i] ? *opts.limb_config_override[i] : cfg;
    limbs.push_back(
        std::make_unique<LimbParty>(lc, i, data[i].train, data[i].test, std::move(limb_ends[i]), opts.timeout));
    limbs.back()->record_sent(opts.record_transcript);
    limbs.back()->record_checksums(opts.step_checksums);
  }
  ServerParty server(cfg, std::move(server_ends), opts.timeout);
  server.record_transcript(opts.record_transcript);
  server.record_checksums(opts.step_checksums);

  std::vector<std::exception_ptr> errors(cfg.k + 1);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.k; ++i) {
    threads.emplace_back([&, i] {
      try {
        limbs[i]->run();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  try {
    server.run();
  } catch (...) {
    errors[cfg.k] = std::current_exception();
  }
  for (auto& t : threads) t.join();

  RunResult r;
  for (const auto& e : errors) {
    if (e && (!r.error || (party_detail::is_transport_error(r.error) && !party_detail::is_transport_error(e)))) {
      r.error = e;
    }
  }
  std::vector<TrainTrace> parts;
  for (const auto& l : limbs) {
    parts.push_back(l->trace());
    r.limbs.push_back(l->model());
    r.limb_sent.push_back(l->sent());
    if (l->head()) r.head = l->head();
  }
  parts.push_back(server.trace());
  r.trace = merge_traces(parts);
  r.transcript = server.transcript();
  r.server = server.model();
  if (server.head()) r.head = server.head();
  return r;
}

/// Forward-only pass with the evaluation batching of a session; no parameter
/// is modified. Returns the mean loss and accuracy.
inline EvalAccumulator evaluate(std::span<const LimbModel> limbs, const ServerModel& server, const HeadModel& head,
                                std::span<const LabeledShardSet> sets, std::size_t batch_size) {
  if (sets.empty() || sets.front().size() == 0) throw std::invalid_argument("evaluate: empty data set");
  if (sets.size() != limbs.size()) throw std::invalid_argument("evaluate: one shard set per limb required");
  const auto& holder = sets.front();
  if (!holder.labels) throw std::invalid_argument("evaluate: limb 0 shard set carries no labels");
  for (const auto& s : sets) {
    if (s.sample_ids != holder.sample_ids) throw std::invalid_argument("evaluate: shard sets are not aligned");
  }
  EvalAccumulator acc;
  const std::size_t n = holder.size();
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += batch_size) {
    rows.clear();
    for (std::size_t r = start; r < std::min(n, start + batch_size); ++r) rows.push_back(r);
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < limbs.size(); ++i) parts.push_back(limbs[i].infer(gather_rows(sets[i].features, rows)));
    acc.add(head.infer(server.infer(parts)), gather_labels(*holder.labels, rows));
  }
  return acc;
}

}  // namespace splitlimb
