#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

#include "splitlimb/wire.hpp"

namespace splitlimb {

enum class SessionPhase { Handshake, AwaitSmashed, AwaitLabels, AwaitHeadGrad, Backward, EpochBoundary, Closed };

// Sub-state of EpochBoundary.
enum class Boundary { None, AwaitEndEpoch, AwaitEvalPass, AwaitMetrics, AwaitNextEpoch };

inline const char* to_string(SessionPhase p) noexcept {
  switch (p) {
    case SessionPhase::Handshake: return "Handshake";
    case SessionPhase::AwaitSmashed: return "AwaitSmashed";
    case SessionPhase::AwaitLabels: return "AwaitLabels";
    case SessionPhase::AwaitHeadGrad: return "AwaitHeadGrad";
    case SessionPhase::Backward: return "Backward";
    case SessionPhase::EpochBoundary: return "EpochBoundary";
    case SessionPhase::Closed: return "Closed";
  }
  return "?";
}

enum class ViolationKind {
  UnexpectedMessage,
  DuplicateHello,
  DigestMismatch,
  TopologyMismatch,
  BadLimbIndex,
  SmashedBeforeBatchMeta,
  DuplicateLimb,
  LabelsForbiddenInUShaped,
  HeadExchangeOutsideUShaped,
  BatchOutOfSequence,
  EpochMismatch,
  ShapeMismatch,
  AfterClose,
  Incomplete,
};

inline const char* to_string(ViolationKind k) noexcept {
  switch (k) {
    case ViolationKind::UnexpectedMessage: return "unexpected message";
    case ViolationKind::DuplicateHello: return "duplicate hello";
    case ViolationKind::DigestMismatch: return "config digest mismatch";
    case ViolationKind::TopologyMismatch: return "topology mismatch";
    case ViolationKind::BadLimbIndex: return "bad limb index";
    case ViolationKind::SmashedBeforeBatchMeta: return "smashed before batch meta";
    case ViolationKind::DuplicateLimb: return "duplicate limb";
    case ViolationKind::LabelsForbiddenInUShaped: return "labels forbidden in u-shaped";
    case ViolationKind::HeadExchangeOutsideUShaped: return "head exchange outside u-shaped";
    case ViolationKind::BatchOutOfSequence: return "batch out of sequence";
    case ViolationKind::EpochMismatch: return "epoch mismatch";
    case ViolationKind::ShapeMismatch: return "shape mismatch";
    case ViolationKind::AfterClose: return "message after close";
    case ViolationKind::Incomplete: return "session ended early";
  }
  return "?";
}

class ProtocolViolation : public std::runtime_error {
 public:
  ProtocolViolation(ViolationKind kind, const std::string& detail)
      : std::runtime_error(std::string("protocol violation: ") + to_string(kind) + ": " + detail), kind_(kind) {}
  ViolationKind kind() const noexcept { return kind_; }

 private:
  ViolationKind kind_;
};

inline constexpr std::size_t kMaxLimbs = 64;

/// Session automaton state, seen from the server's position: every logical
/// message of the session (sent or received) is stepped through it once.
///
///   Handshake   Hello from each limb and from the server, any order
///   per batch   BatchMeta, Smashed x k (any order),
///               Labels (vanilla/vertical) | HeadActivations [, HeadGrad] (u-shaped),
///               SmashedGrad x k (any order)              -- training batches only
///   per epoch   training pass, EndEpoch, eval pass over the training split,
///               Metrics(train), eval pass over the test split, Metrics(test)
///   end         EndSession{0} after a completed epoch
///
/// EndSession with a nonzero reason closes the session from any phase.
struct SessionState {
  Topology topology = Topology::Vertical;
  std::size_t limb_count = 1;

  SessionPhase phase = SessionPhase::Handshake;
  Boundary boundary = Boundary::None;
  std::uint64_t expected_limbs = 0;  // limbs not yet heard from in this step
  bool server_hello = false;
  bool digest_known = false;
  std::uint64_t digest = 0;

  std::uint32_t epoch = 0;
  BatchPhase pass = BatchPhase::Train;
  std::uint32_t pass_count = 0;  // 0 until the first batch of a pass announces it
  std::uint32_t next_batch = 0;
  bool batch_open = false;
  std::size_t batch_rows = 0;
  std::uint32_t close_reason = 0;

  std::uint64_t all_limbs() const noexcept {
    return limb_count == kMaxLimbs ? ~std::uint64_t{0} : (std::uint64_t{1} << limb_count) - 1;
  }
  bool completed() const noexcept { return phase == SessionPhase::Closed && close_reason == 0; }
  bool operator==(const SessionState&) const = default;
};

inline SessionState initial_session(Topology topology, std::size_t limb_count) {
  if (limb_count == 0 || limb_count > kMaxLimbs) throw std::invalid_argument("session: limb count must be 1..64");
  if (topology == Topology::Vanilla && limb_count != 1) {
    throw std::invalid_argument("session: vanilla topology has exactly one limb");
  }
  SessionState s;
  s.topology = topology;
  s.limb_count = limb_count;
  s.expected_limbs = s.all_limbs();
  return s;
}

namespace session_detail {

[[noreturn]] inline void fail(ViolationKind k, const std::string& detail) { throw ProtocolViolation(k, detail); }

inline std::string where(const SessionState& s) {
  return std::string(" (phase ") + to_string(s.phase) + ", epoch " + std::to_string(s.epoch) + ", batch " +
         std::to_string(s.next_batch) + ")";
}

inline void check_rows(const SessionState& s, std::size_t rows, const char* what) {
  if (rows != s.batch_rows) {
    fail(ViolationKind::ShapeMismatch, std::string(what) + " has " + std::to_string(rows) + " rows, batch has " +
                                           std::to_string(s.batch_rows));
  }
}

inline void finish_step(SessionState& s) {
  s.batch_open = false;
  ++s.next_batch;
  if (s.next_batch == s.pass_count) {
    s.phase = SessionPhase::EpochBoundary;
    s.boundary = s.pass == BatchPhase::Train ? Boundary::AwaitEndEpoch : Boundary::AwaitMetrics;
  } else {
    s.phase = SessionPhase::AwaitSmashed;
  }
}

inline void start_pass(SessionState& s, BatchPhase pass) {
  s.pass = pass;
  s.pass_count = 0;
  s.next_batch = 0;
}

inline void on_hello(SessionState& s, const Hello& m) {
  if (s.phase != SessionPhase::Handshake) fail(ViolationKind::DuplicateHello, "hello after handshake" + where(s));
  if (m.topology != s.topology) {
    fail(ViolationKind::TopologyMismatch,
         std::string("peer announces ") + to_string(m.topology) + ", session is " + to_string(s.topology));
  }
  if (s.digest_known && m.config_digest != s.digest) {
    fail(ViolationKind::DigestMismatch, "hello digest differs from the first announced digest");
  }
  if (m.role == Role::Server) {
    if (s.server_hello) fail(ViolationKind::DuplicateHello, "second server hello");
    s.server_hello = true;
  } else {
    if (m.limb_index >= s.limb_count) fail(ViolationKind::BadLimbIndex, "limb " + std::to_string(m.limb_index));
    const bool holder = m.limb_index == 0;
    if ((m.role == Role::LabelHolder) != holder) {
      fail(ViolationKind::UnexpectedMessage, "limb 0 and only limb 0 announces itself as label holder");
    }
    const std::uint64_t bit = std::uint64_t{1} << m.limb_index;
    if (!(s.expected_limbs & bit)) fail(ViolationKind::DuplicateHello, "limb " + std::to_string(m.limb_index));
    s.expected_limbs &= ~bit;
  }
  s.digest_known = true;
  s.digest = m.config_digest;
  if (s.server_hello && s.expected_limbs == 0) {
    s.phase = SessionPhase::AwaitSmashed;
    start_pass(s, BatchPhase::Train);
  }
}

inline void on_batch_meta(SessionState& s, const BatchMeta& m) {
  const bool idle = s.phase == SessionPhase::AwaitSmashed && !s.batch_open;
  if (idle) {
    if (m.phase != s.pass) fail(ViolationKind::BatchOutOfSequence, "batch belongs to another pass" + where(s));
    if (m.epoch != s.epoch) fail(ViolationKind::EpochMismatch, "batch for epoch " + std::to_string(m.epoch) + where(s));
  } else if (s.phase == SessionPhase::EpochBoundary && s.boundary == Boundary::AwaitEvalPass) {
    if (m.phase != s.pass) fail(ViolationKind::BatchOutOfSequence, "expected an evaluation pass" + where(s));
    if (m.epoch != s.epoch) fail(ViolationKind::EpochMismatch, "batch for epoch " + std::to_string(m.epoch) + where(s));
  } else if (s.phase == SessionPhase::EpochBoundary && s.boundary == Boundary::AwaitNextEpoch) {
    if (m.phase != BatchPhase::Train) fail(ViolationKind::BatchOutOfSequence, "expected a training pass" + where(s));
    if (m.epoch != s.epoch + 1) {
      fail(ViolationKind::EpochMismatch, "batch for epoch " + std::to_string(m.epoch) + where(s));
    }
    s.epoch = m.epoch;
    start_pass(s, BatchPhase::Train);
  } else {
    fail(ViolationKind::BatchOutOfSequence, "batch meta not expected" + where(s));
  }
  if (m.batch_index != s.next_batch) {
    fail(ViolationKind::BatchOutOfSequence, "batch index " + std::to_string(m.batch_index) + where(s));
  }
  if (s.next_batch == 0) {
    if (m.batch_count == 0) fail(ViolationKind::BatchOutOfSequence, "pass announces zero batches");
    s.pass_count = m.batch_count;
  } else if (m.batch_count != s.pass_count) {
    fail(ViolationKind::BatchOutOfSequence, "batch count changed within a pass" + where(s));
  }
  s.phase = SessionPhase::AwaitSmashed;
  s.boundary = Boundary::None;
  s.batch_open = true;
  s.batch_rows = m.sample_ids.size();
  s.expected_limbs = s.all_limbs();
}

inline void on_smashed(SessionState& s, const Smashed& m) {
  if (m.limb_index >= s.limb_count) fail(ViolationKind::BadLimbIndex, "smashed from limb " + std::to_string(m.limb_index));
  if (s.phase == SessionPhase::AwaitSmashed && !s.batch_open) {
    fail(ViolationKind::SmashedBeforeBatchMeta, "limb " + std::to_string(m.limb_index) + where(s));
  }
  const bool later = s.phase == SessionPhase::AwaitLabels || s.phase == SessionPhase::AwaitHeadGrad ||
                     s.phase == SessionPhase::Backward;
  const std::uint64_t bit = std::uint64_t{1} << m.limb_index;
  if (later || (s.phase == SessionPhase::AwaitSmashed && !(s.expected_limbs & bit))) {
    fail(ViolationKind::DuplicateLimb, "limb " + std::to_string(m.limb_index) + " already sent smashed data" + where(s));
  }
  if (s.phase != SessionPhase::AwaitSmashed) fail(ViolationKind::SmashedBeforeBatchMeta, "no open batch" + where(s));
  check_rows(s, m.data.rows(), "smashed data");
  s.expected_limbs &= ~bit;
  if (s.expected_limbs == 0) s.phase = SessionPhase::AwaitLabels;
}

inline void on_labels(SessionState& s, const Labels& m) {
  if (s.topology == Topology::UShaped) fail(ViolationKind::LabelsForbiddenInUShaped, "labels never leave the label holder");
  if (s.phase != SessionPhase::AwaitLabels) fail(ViolationKind::UnexpectedMessage, "labels" + where(s));
  check_rows(s, m.data.rows(), "labels");
  if (s.pass == BatchPhase::Train) {
    s.phase = SessionPhase::Backward;
    s.expected_limbs = s.all_limbs();
  } else {
    finish_step(s);
  }
}

inline void on_head_activations(SessionState& s, const HeadActivations& m) {
  if (s.topology != Topology::UShaped) fail(ViolationKind::HeadExchangeOutsideUShaped, "head activations");
  if (s.phase != SessionPhase::AwaitLabels) fail(ViolationKind::UnexpectedMessage, "head activations" + where(s));
  check_rows(s, m.data.rows(), "head activations");
  if (s.pass == BatchPhase::Train) {
    s.phase = SessionPhase::AwaitHeadGrad;
  } else {
    finish_step(s);
  }
}

inline void on_head_grad(SessionState& s, const HeadGrad& m) {
  if (s.topology != Topology::UShaped) fail(ViolationKind::HeadExchangeOutsideUShaped, "head gradient");
  if (s.phase != SessionPhase::AwaitHeadGrad) fail(ViolationKind::UnexpectedMessage, "head gradient" + where(s));
  check_rows(s, m.data.rows(), "head gradient");
  s.phase = SessionPhase::Backward;
  s.expected_limbs = s.all_limbs();
}

inline void on_smashed_grad(SessionState& s, const SmashedGrad& m) {
  if (m.limb_index >= s.limb_count) fail(ViolationKind::BadLimbIndex, "gradient for limb " + std::to_string(m.limb_index));
  if (s.phase != SessionPhase::Backward) fail(ViolationKind::UnexpectedMessage, "smashed gradient" + where(s));
  const std::uint64_t bit = std::uint64_t{1} << m.limb_index;
  if (!(s.expected_limbs & bit)) {
    fail(ViolationKind::DuplicateLimb, "limb " + std::to_string(m.limb_index) + " already received its gradient");
  }
  check_rows(s, m.data.rows(), "smashed gradient");
  s.expected_limbs &= ~bit;
  if (s.expected_limbs == 0) finish_step(s);
}

inline void on_end_epoch(SessionState& s, const EndEpoch& m) {
  if (s.phase != SessionPhase::EpochBoundary || s.boundary != Boundary::AwaitEndEpoch) {
    fail(ViolationKind::UnexpectedMessage, "end of epoch" + where(s));
  }
  if (m.epoch != s.epoch) fail(ViolationKind::EpochMismatch, "end of epoch " + std::to_string(m.epoch) + where(s));
  s.boundary = Boundary::AwaitEvalPass;
  start_pass(s, BatchPhase::EvalTrain);
}

inline void on_metrics(SessionState& s, const Metrics& m) {
  if (s.phase != SessionPhase::EpochBoundary || s.boundary != Boundary::AwaitMetrics) {
    fail(ViolationKind::UnexpectedMessage, "metrics" + where(s));
  }
  const Split expected = s.pass == BatchPhase::EvalTrain ? Split::Train : Split::Test;
  if (m.split != expected) fail(ViolationKind::UnexpectedMessage, std::string("metrics for ") + to_string(m.split) + where(s));
  if (m.epoch != s.epoch) fail(ViolationKind::EpochMismatch, "metrics for epoch " + std::to_string(m.epoch) + where(s));
  if (expected == Split::Train) {
    s.boundary = Boundary::AwaitEvalPass;
    start_pass(s, BatchPhase::EvalTest);
  } else {
    s.boundary = Boundary::AwaitNextEpoch;
  }
}

inline void on_end_session(SessionState& s, const EndSession& m) {
  if (m.reason == 0 && !(s.phase == SessionPhase::EpochBoundary && s.boundary == Boundary::AwaitNextEpoch)) {
    fail(ViolationKind::UnexpectedMessage, "session end before a completed epoch" + where(s));
  }
  s.phase = SessionPhase::Closed;
  s.boundary = Boundary::None;
  s.close_reason = m.reason;
}

}  // namespace session_detail

/// Advances the automaton by one message. Returns the successor state or
/// throws ProtocolViolation; the input state is never modified.
inline SessionState step_state(SessionState state, const Message& msg) {
  using namespace session_detail;
  if (state.phase == SessionPhase::Closed) fail(ViolationKind::AfterClose, message_name(msg));
  if (state.phase == SessionPhase::Handshake && !std::holds_alternative<Hello>(msg) &&
      !std::holds_alternative<EndSession>(msg)) {
    fail(ViolationKind::UnexpectedMessage, std::string(message_name(msg)) + " during handshake");
  }
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Hello>) on_hello(state, m);
        else if constexpr (std::is_same_v<M, BatchMeta>) on_batch_meta(state, m);
        else if constexpr (std::is_same_v<M, Smashed>) on_smashed(state, m);
        else if constexpr (std::is_same_v<M, SmashedGrad>) on_smashed_grad(state, m);
        else if constexpr (std::is_same_v<M, Labels>) on_labels(state, m);
        else if constexpr (std::is_same_v<M, HeadActivations>) on_head_activations(state, m);
        else if constexpr (std::is_same_v<M, HeadGrad>) on_head_grad(state, m);
        else if constexpr (std::is_same_v<M, Metrics>) on_metrics(state, m);
        else if constexpr (std::is_same_v<M, EndEpoch>) on_end_epoch(state, m);
        else if constexpr (std::is_same_v<M, EndSession>) on_end_session(state, m);
      },
      msg);
  return state;
}

/// Steps through a whole transcript and returns the final state.
inline SessionState replay(SessionState state, std::span<const Message> transcript) {
  for (const auto& m : transcript) state = step_state(std::move(state), m);
  return state;
}

/// Like replay, but a transcript that stops before EndSession{0} is itself
/// a violation.
inline SessionState replay_complete(SessionState state, std::span<const Message> transcript) {
  state = replay(std::move(state), transcript);
  if (!state.completed()) {
    session_detail::fail(ViolationKind::Incomplete, "transcript stops" + session_detail::where(state));
  }
  return state;
}

}  // namespace splitlimb
