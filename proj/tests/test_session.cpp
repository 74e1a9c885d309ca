#include <gtest/gtest.h>

#include "fuzz.hpp"
#include "splitlimb/splitlimb.hpp"

using namespace splitlimb;

namespace {

constexpr std::uint64_t kDigest = 0xABCDEFull;

Hello limb_hello(std::uint16_t i, Topology t = Topology::Vertical) {
  return Hello{i == 0 ? Role::LabelHolder : Role::Limb, i, t, kDigest};
}
Hello server_hello(Topology t = Topology::Vertical) { return Hello{Role::Server, 0, t, kDigest}; }

SessionState handshaken(Topology t, std::size_t k) {
  auto s = initial_session(t, k);
  for (std::size_t i = 0; i < k; ++i) s = step_state(s, limb_hello(static_cast<std::uint16_t>(i), t));
  return step_state(s, server_hello(t));
}

BatchMeta meta(std::uint32_t epoch, BatchPhase phase, std::uint32_t index, std::uint32_t count, std::size_t rows = 2) {
  BatchMeta m{epoch, phase, index, count, {}};
  for (std::size_t r = 0; r < rows; ++r) m.sample_ids.push_back(r);
  return m;
}

ViolationKind violation(const SessionState& s, const Message& m) {
  try {
    (void)step_state(s, m);
  } catch (const ProtocolViolation& e) {
    return e.kind();
  }
  ADD_FAILURE() << message_name(m) << " accepted";
  return ViolationKind::Incomplete;
}

Tensor rows(std::size_t n, std::size_t c = 3) { return Tensor(n, c, 0.5f); }

}  // namespace

TEST(Session, HandshakeWithTwoLimbsReachesAwaitSmashed) {
  auto s = initial_session(Topology::Vertical, 2);
  EXPECT_EQ(s.phase, SessionPhase::Handshake);
  s = step_state(s, limb_hello(0));
  s = step_state(s, limb_hello(1));
  EXPECT_EQ(s.phase, SessionPhase::Handshake);
  s = step_state(s, server_hello());
  EXPECT_EQ(s.phase, SessionPhase::AwaitSmashed);
}

TEST(Session, HandshakeOrderIsFree) {
  auto s = initial_session(Topology::Vertical, 3);
  s = step_state(s, server_hello());
  s = step_state(s, limb_hello(2));
  s = step_state(s, limb_hello(0));
  s = step_state(s, limb_hello(1));
  EXPECT_EQ(s.phase, SessionPhase::AwaitSmashed);
}

TEST(Session, HandshakeViolations) {
  auto s = initial_session(Topology::Vertical, 2);
  auto one = step_state(s, limb_hello(0));
  EXPECT_EQ(violation(one, limb_hello(0)), ViolationKind::DuplicateHello);
  EXPECT_EQ(violation(s, limb_hello(2)), ViolationKind::BadLimbIndex);
  EXPECT_EQ(violation(s, Hello{Role::Limb, 0, Topology::Vertical, kDigest}), ViolationKind::UnexpectedMessage);
  EXPECT_EQ(violation(s, Hello{Role::LabelHolder, 1, Topology::Vertical, kDigest}), ViolationKind::UnexpectedMessage);
  EXPECT_EQ(violation(one, Hello{Role::Limb, 1, Topology::Vertical, kDigest + 1}), ViolationKind::DigestMismatch);
  EXPECT_EQ(violation(s, limb_hello(0, Topology::UShaped)), ViolationKind::TopologyMismatch);
  EXPECT_EQ(violation(s, meta(0, BatchPhase::Train, 0, 1)), ViolationKind::UnexpectedMessage);
  EXPECT_EQ(violation(handshaken(Topology::Vertical, 2), server_hello()), ViolationKind::DuplicateHello);
}

TEST(Session, StepStateDoesNotModifyItsInput) {
  const auto s = handshaken(Topology::Vertical, 2);
  const auto copy = s;
  (void)step_state(s, meta(0, BatchPhase::Train, 0, 1));
  EXPECT_EQ(s, copy);
}

TEST(Session, VerticalTrainingStep) {
  auto s = handshaken(Topology::Vertical, 2);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 2));
  s = step_state(s, Smashed{1, rows(2)});
  EXPECT_EQ(s.phase, SessionPhase::AwaitSmashed);
  EXPECT_EQ(s.expected_limbs, 1u);
  s = step_state(s, Smashed{0, rows(2)});
  EXPECT_EQ(s.phase, SessionPhase::AwaitLabels);
  s = step_state(s, Labels{rows(2, 1)});
  EXPECT_EQ(s.phase, SessionPhase::Backward);
  s = step_state(s, SmashedGrad{0, rows(2)});
  s = step_state(s, SmashedGrad{1, rows(2)});
  EXPECT_EQ(s.phase, SessionPhase::AwaitSmashed);
  EXPECT_EQ(s.next_batch, 1u);
}

TEST(Session, DuplicateSmashedIsDuplicateLimb) {
  auto s = handshaken(Topology::Vertical, 2);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 1));
  s = step_state(s, Smashed{0, rows(2)});
  try {
    (void)step_state(s, Smashed{0, rows(2)});
    FAIL() << "accepted";
  } catch (const ProtocolViolation& e) {
    EXPECT_EQ(e.kind(), ViolationKind::DuplicateLimb);
    EXPECT_NE(std::string(e.what()).find("duplicate limb"), std::string::npos);
  }
}

TEST(Session, SmashedBeforeBatchMeta) {
  const auto s = handshaken(Topology::Vertical, 2);
  EXPECT_EQ(violation(s, Smashed{0, rows(2)}), ViolationKind::SmashedBeforeBatchMeta);
}

TEST(Session, LabelsForbiddenInUShaped) {
  auto s = handshaken(Topology::UShaped, 2);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 1));
  s = step_state(s, Smashed{0, rows(2)});
  s = step_state(s, Smashed{1, rows(2)});
  try {
    (void)step_state(s, Labels{rows(2, 1)});
    FAIL() << "accepted";
  } catch (const ProtocolViolation& e) {
    EXPECT_EQ(e.kind(), ViolationKind::LabelsForbiddenInUShaped);
    EXPECT_NE(std::string(e.what()).find("labels forbidden in u-shaped"), std::string::npos);
  }
}

TEST(Session, UShapedStepAndHeadExchangeOutsideUShaped) {
  auto s = handshaken(Topology::UShaped, 2);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 1));
  s = step_state(s, Smashed{0, rows(2)});
  s = step_state(s, Smashed{1, rows(2)});
  s = step_state(s, HeadActivations{rows(2, 4)});
  EXPECT_EQ(s.phase, SessionPhase::AwaitHeadGrad);
  s = step_state(s, HeadGrad{rows(2, 4)});
  EXPECT_EQ(s.phase, SessionPhase::Backward);

  auto v = handshaken(Topology::Vertical, 1);
  v = step_state(v, meta(0, BatchPhase::Train, 0, 1));
  v = step_state(v, Smashed{0, rows(2)});
  EXPECT_EQ(violation(v, HeadActivations{rows(2, 4)}), ViolationKind::HeadExchangeOutsideUShaped);
}

TEST(Session, RowCountsMustMatchTheBatch) {
  auto s = handshaken(Topology::Vertical, 1);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 1, 3));
  EXPECT_EQ(violation(s, Smashed{0, rows(2)}), ViolationKind::ShapeMismatch);
}

TEST(Session, EmptyBatchStillAdvances) {
  auto s = handshaken(Topology::Vertical, 1);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 2, 0));
  s = step_state(s, Smashed{0, Tensor(0, 3)});
  s = step_state(s, Labels{Tensor(0, 1)});
  s = step_state(s, SmashedGrad{0, Tensor(0, 3)});
  EXPECT_EQ(s.next_batch, 1u);
  EXPECT_EQ(s.phase, SessionPhase::AwaitSmashed);
}

TEST(Session, BatchSequencing) {
  auto s = handshaken(Topology::Vertical, 1);
  EXPECT_EQ(violation(s, meta(0, BatchPhase::Train, 1, 2)), ViolationKind::BatchOutOfSequence);
  EXPECT_EQ(violation(s, meta(1, BatchPhase::Train, 0, 2)), ViolationKind::EpochMismatch);
  EXPECT_EQ(violation(s, meta(0, BatchPhase::EvalTrain, 0, 2)), ViolationKind::BatchOutOfSequence);
  EXPECT_EQ(violation(s, meta(0, BatchPhase::Train, 0, 0)), ViolationKind::BatchOutOfSequence);
  EXPECT_EQ(violation(s, EndEpoch{0}), ViolationKind::UnexpectedMessage);
  EXPECT_EQ(violation(s, EndSession{0}), ViolationKind::UnexpectedMessage);
}

TEST(Session, AbortFromAnyPhaseThenNothing) {
  auto s = handshaken(Topology::Vertical, 2);
  s = step_state(s, meta(0, BatchPhase::Train, 0, 1));
  s = step_state(s, EndSession{3});
  EXPECT_EQ(s.phase, SessionPhase::Closed);
  EXPECT_FALSE(s.completed());
  EXPECT_EQ(violation(s, EndEpoch{0}), ViolationKind::AfterClose);
}

TEST(Session, InvalidSessionShapes) {
  EXPECT_THROW(initial_session(Topology::Vertical, 0), std::invalid_argument);
  EXPECT_THROW(initial_session(Topology::Vanilla, 2), std::invalid_argument);
  EXPECT_THROW(initial_session(Topology::Vertical, 65), std::invalid_argument);
}

class Transcripts : public ::testing::TestWithParam<std::tuple<Topology, std::size_t>> {};

TEST_P(Transcripts, FullRunIsAcceptedAndEveryMutationRejected) {
  const auto [topology, k] = GetParam();
  const auto t = fuzz::session_transcript(topology, k, 2, 20, 3);
  EXPECT_TRUE(replay_complete(initial_session(topology, k), t).completed());

  std::vector<Message> truncated(t.begin(), t.end() - 1);
  EXPECT_THROW(replay_complete(initial_session(topology, k), truncated), ProtocolViolation);

  const auto st = fuzz::transcript_mutations(t, topology, k, 600, 17 + k);
  EXPECT_EQ(st.cases, 600u);
  EXPECT_EQ(st.rejected, st.cases);
  for (const auto& f : st.failures) ADD_FAILURE() << f;
}

INSTANTIATE_TEST_SUITE_P(Topologies, Transcripts,
                         ::testing::Values(std::tuple{Topology::Vanilla, std::size_t{1}},
                                           std::tuple{Topology::Vertical, std::size_t{2}},
                                           std::tuple{Topology::Vertical, std::size_t{3}},
                                           std::tuple{Topology::UShaped, std::size_t{2}},
                                           std::tuple{Topology::UShaped, std::size_t{1}}));

TEST(Transcripts, SwappingSmashedOfOneStepIsLegal) {
  const auto t = fuzz::session_transcript(Topology::Vertical, 2, 1, 10, 4);
  auto u = t;
  for (std::size_t i = 0; i + 1 < u.size(); ++i) {
    if (std::holds_alternative<Smashed>(u[i]) && std::holds_alternative<Smashed>(u[i + 1])) {
      std::swap(u[i], u[i + 1]);
      break;
    }
  }
  ASSERT_NE(u, t);
  EXPECT_TRUE(replay_complete(initial_session(Topology::Vertical, 2), u).completed());
}
