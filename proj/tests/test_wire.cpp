#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "fuzz.hpp"
#include "splitlimb/splitlimb.hpp"

using namespace splitlimb;

namespace {

DecodeErrorKind decode_kind(std::span<const std::uint8_t> frame) {
  try {
    (void)decode(frame);
  } catch (const DecodeError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "frame decoded";
  return DecodeErrorKind::MalformedPayload;
}

void put_u32(std::vector<std::uint8_t>& f, std::size_t off, std::uint32_t v) { std::memcpy(f.data() + off, &v, 4); }

// Recomputes the trailer so only the deliberate change is under test.
void reseal(std::vector<std::uint8_t>& f) {
  const std::size_t body = f.size() - kFrameTrailerBytes;
  put_u32(f, body, crc32_ieee(std::span<const std::uint8_t>(f).first(body)));
}

}  // namespace

TEST(Codec, RoundTripsEveryVariantWithRandomFields) {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    for (std::size_t v = 0; v < fuzz::kVariants; ++v) {
      const Message m = fuzz::random_message(rng, v);
      const std::uint64_t session = rng.next_u64();
      const auto env = decode(encode(m, session));
      ASSERT_EQ(env.session_id, session);
      ASSERT_EQ(env.message, m) << message_name(m);
    }
  }
}

TEST(Codec, EncodingIsCanonical) {
  Rng rng(12);
  std::set<std::vector<std::uint8_t>> frames;
  std::vector<Message> msgs;
  for (int rep = 0; rep < 50; ++rep) {
    for (std::size_t v = 0; v < fuzz::kVariants; ++v) msgs.push_back(fuzz::random_message(rng, v));
  }
  for (const auto& m : msgs) {
    const auto f = encode(m, 5);
    EXPECT_EQ(encode(decode(f).message, 5), f);
    frames.insert(f);
  }
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i && !seen; ++j) seen = msgs[j] == msgs[i];
    distinct += !seen;
  }
  EXPECT_EQ(frames.size(), distinct);
}

TEST(Codec, EndEpochFrameIsThirtyBytes) {
  const auto f = encode(EndEpoch{0}, 0);
  EXPECT_EQ(f.size(), kFrameHeaderBytes + 4 + kFrameTrailerBytes);
  EXPECT_EQ(f.size(), 30u);
  EXPECT_EQ(frame_length_from_header(f), 30u);
}

TEST(Codec, HeaderLayoutIsLittleEndian) {
  const auto f = encode(EndEpoch{0x01020304}, 0x1122334455667788ull);
  EXPECT_EQ(std::string(f.begin(), f.begin() + 4), "SPLT");
  EXPECT_EQ(f[4], 1);
  EXPECT_EQ(f[5], 0);
  EXPECT_EQ(f[6], 9);  // EndEpoch is the ninth variant
  EXPECT_EQ(f[10], 0x88);
  EXPECT_EQ(f[17], 0x11);
  EXPECT_EQ(f[18], 4);
  EXPECT_EQ(f[22], 0x04);
  EXPECT_EQ(f[25], 0x01);
}

TEST(Codec, TensorPayloadIsRowsTimesColsTimesFour) {
  Tensor t(3, 5, 1.5f);
  const auto f = encode(Smashed{1, t}, 0);
  // limb_index u16, rows u32, cols u32, then the floats
  EXPECT_EQ(f.size(), kFrameHeaderBytes + 2 + 4 + 4 + 3 * 5 * 4 + kFrameTrailerBytes);
}

TEST(Codec, EveryPayloadByteFlipIsAChecksumError) {
  const Message m = Smashed{0, Tensor(2, 3, 0.25f)};
  const auto f = encode(m, 42);
  for (std::size_t i = kFrameHeaderBytes; i < f.size() - kFrameTrailerBytes; ++i) {
    for (std::uint8_t mask : {std::uint8_t{1}, std::uint8_t{0x80}, std::uint8_t{0xFF}}) {
      auto g = f;
      g[i] ^= mask;
      EXPECT_EQ(decode_kind(g), DecodeErrorKind::BadChecksum) << "byte " << i;
    }
  }
}

TEST(Codec, EveryHeaderOrTrailerFlipIsClassified) {
  const auto f = encode(Metrics{3, Split::Test, 0.5f, 0.75}, 9);
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto g = f;
    g[i] ^= 0x10;
    const auto kind = decode_kind(g);
    if (i < 4) EXPECT_EQ(kind, DecodeErrorKind::BadMagic);
    else if (i < 6 || i == 8 || i == 9) EXPECT_EQ(kind, DecodeErrorKind::UnknownVersion);
    else if (i >= 18 && i < 22) EXPECT_EQ(kind, DecodeErrorKind::LengthMismatch);
    else EXPECT_EQ(kind, DecodeErrorKind::BadChecksum) << "byte " << i;
  }
}

TEST(Codec, DistinctErrorKinds) {
  const auto f = encode(EndSession{1}, 3);

  auto bad_magic = f;
  bad_magic[0] = 'X';
  reseal(bad_magic);
  EXPECT_EQ(decode_kind(bad_magic), DecodeErrorKind::BadMagic);

  auto version = f;
  version[4] = 2;
  reseal(version);
  EXPECT_EQ(decode_kind(version), DecodeErrorKind::UnknownVersion);

  auto tag = f;
  tag[6] = 0x63;
  reseal(tag);
  EXPECT_EQ(decode_kind(tag), DecodeErrorKind::UnknownTag);

  auto tag0 = f;
  tag0[6] = 0;
  reseal(tag0);
  EXPECT_EQ(decode_kind(tag0), DecodeErrorKind::UnknownTag);

  auto truncated = f;
  truncated.pop_back();
  EXPECT_EQ(decode_kind(truncated), DecodeErrorKind::LengthMismatch);

  auto extended = f;
  extended.push_back(0);
  EXPECT_EQ(decode_kind(extended), DecodeErrorKind::LengthMismatch);

  auto crc = f;
  crc.back() ^= 1;
  EXPECT_EQ(decode_kind(crc), DecodeErrorKind::BadChecksum);

  EXPECT_EQ(decode_kind({}), DecodeErrorKind::LengthMismatch);
}

TEST(Codec, PayloadLengthDisagreementsAreLengthMismatches) {
  // An EndEpoch payload re-tagged as Metrics is too short for Metrics.
  auto f = encode(EndEpoch{7}, 1);
  f[6] = 8;
  reseal(f);
  EXPECT_EQ(decode_kind(f), DecodeErrorKind::LengthMismatch);

  // Row count announcing more floats than the payload holds.
  auto g = encode(Labels{Tensor(2, 1, 1.0f)}, 1);
  put_u32(g, kFrameHeaderBytes, 3);
  reseal(g);
  EXPECT_EQ(decode_kind(g), DecodeErrorKind::LengthMismatch);

  auto t = encode(HeadGrad{Tensor(2, 2, 1.0f)}, 1);
  put_u32(t, kFrameHeaderBytes + 4, 3);
  reseal(t);
  EXPECT_EQ(decode_kind(t), DecodeErrorKind::LengthMismatch);

  // Trailing payload bytes after a complete message.
  auto h = encode(EndEpoch{7}, 1);
  h.insert(h.end() - kFrameTrailerBytes, 0);
  put_u32(h, 18, 5);
  reseal(h);
  EXPECT_EQ(decode_kind(h), DecodeErrorKind::LengthMismatch);
}

TEST(Codec, OutOfRangeEnumIsMalformed) {
  auto e = encode(Metrics{0, Split::Train, 0.0f, 0.0}, 1);
  e[kFrameHeaderBytes + 4] = 9;
  reseal(e);
  EXPECT_EQ(decode_kind(e), DecodeErrorKind::MalformedPayload);

  auto h = encode(Hello{Role::Limb, 0, Topology::Vertical, 1}, 1);
  h[kFrameHeaderBytes] = 3;
  reseal(h);
  EXPECT_EQ(decode_kind(h), DecodeErrorKind::MalformedPayload);
}

TEST(Codec, OversizedHeaderIsRejectedBeforeAllocation) {
  auto f = encode(EndEpoch{0}, 0);
  put_u32(f, 18, 0xFFFFFFF0u);
  EXPECT_THROW(frame_length_from_header(f), DecodeError);
}

TEST(Codec, EncodeRefusesFramesOverTheLimit) {
  Tensor big(1, (kMaxFrameBytes / 4) + 1);
  EXPECT_THROW(encode(HeadActivations{big}, 0), std::length_error);
}

TEST(Codec, TagsAndNames) {
  EXPECT_EQ(message_tag(Hello{}), 1);
  EXPECT_EQ(message_tag(EndSession{}), 10);
  EXPECT_STREQ(message_name(Labels{}), "Labels");
  EXPECT_STREQ(message_name(std::uint16_t{0}), "Unknown");
}

TEST(CodecFuzz, RandomByteFlipsAlwaysYieldClassifiedErrors) {
  const auto st = fuzz::frame_byte_flips(3000, 99);
  EXPECT_TRUE(st.ok());
  for (const auto& f : st.failures) ADD_FAILURE() << f;
  EXPECT_GT(st.by_kind.count(DecodeErrorKind::BadChecksum), 0u);
}
