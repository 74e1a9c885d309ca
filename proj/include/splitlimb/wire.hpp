#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "splitlimb/checksum.hpp"
#include "splitlimb/matrix.hpp"

namespace splitlimb {

enum class Topology : std::uint8_t { Vanilla = 0, Vertical = 1, UShaped = 2 };
enum class Role : std::uint8_t { Limb = 0, Server = 1, LabelHolder = 2 };
// Which pass a batch belongs to; evaluation passes never update parameters.
enum class BatchPhase : std::uint8_t { Train = 0, EvalTrain = 1, EvalTest = 2 };
enum class Split : std::uint8_t { Train = 0, Test = 1 };

inline const char* to_string(Topology t) noexcept {
  switch (t) {
    case Topology::Vanilla: return "vanilla";
    case Topology::Vertical: return "vertical";
    case Topology::UShaped: return "ushaped";
  }
  return "?";
}
inline const char* to_string(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

// Message variants ----------------------------------------------------------

struct Hello {
  Role role = Role::Limb;
  std::uint16_t limb_index = 0;
  Topology topology = Topology::Vertical;
  std::uint64_t config_digest = 0;
  bool operator==(const Hello&) const = default;
};

struct BatchMeta {
  std::uint32_t epoch = 0;
  BatchPhase phase = BatchPhase::Train;
  std::uint32_t batch_index = 0;
  std::uint32_t batch_count = 0;             // batches in this pass
  std::vector<std::uint64_t> sample_ids;     // batch_size = sample_ids.size()
  bool operator==(const BatchMeta&) const = default;
};

struct Smashed {
  std::uint16_t limb_index = 0;
  Matrix<float> data;
  bool operator==(const Smashed&) const = default;
};

struct SmashedGrad {
  std::uint16_t limb_index = 0;
  Matrix<float> data;
  bool operator==(const SmashedGrad&) const = default;
};

struct Labels {
  Matrix<float> data;  // [rows x 1]
  bool operator==(const Labels&) const = default;
};

struct HeadActivations {
  Matrix<float> data;
  bool operator==(const HeadActivations&) const = default;
};

struct HeadGrad {
  Matrix<float> data;
  bool operator==(const HeadGrad&) const = default;
};

struct Metrics {
  std::uint32_t epoch = 0;
  Split split = Split::Train;
  float loss = 0.0f;
  double accuracy = 0.0;
  bool operator==(const Metrics&) const = default;
};

struct EndEpoch {
  std::uint32_t epoch = 0;
  bool operator==(const EndEpoch&) const = default;
};

// reason 0 is a normal end of session; anything else is an abort code.
struct EndSession {
  std::uint32_t reason = 0;
  bool operator==(const EndSession&) const = default;
};

using Message = std::variant<Hello, BatchMeta, Smashed, SmashedGrad, Labels, HeadActivations, HeadGrad, Metrics,
                             EndEpoch, EndSession>;

// Wire tags: variant index + 1.
inline std::uint16_t message_tag(const Message& m) noexcept { return static_cast<std::uint16_t>(m.index() + 1); }

inline const char* message_name(std::uint16_t tag) noexcept {
  static constexpr std::array<const char*, 10> names = {"Hello",   "BatchMeta", "Smashed",  "SmashedGrad",
                                                        "Labels",  "HeadActivations", "HeadGrad", "Metrics",
                                                        "EndEpoch", "EndSession"};
  return tag >= 1 && tag <= names.size() ? names[tag - 1] : "Unknown";
}
inline const char* message_name(const Message& m) noexcept { return message_name(message_tag(m)); }

// Frame layout --------------------------------------------------------------
//
//   off size field
//     0    4 magic "SPLT"
//     4    2 version (1)
//     6    2 msg_type (tag)
//     8    2 flags (reserved, 0)
//    10    8 session_id
//    18    4 payload_len
//    22    n payload
//  22+n    4 CRC-32 over bytes [0, 22+n)
//
// All integers and floats little-endian. PROTOCOL.md has the payloads.

inline constexpr std::array<std::uint8_t, 4> kFrameMagic = {'S', 'P', 'L', 'T'};
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 22;
inline constexpr std::size_t kFrameTrailerBytes = 4;
inline constexpr std::size_t kMaxFrameBytes = std::size_t{64} << 20;

enum class DecodeErrorKind { BadMagic, BadChecksum, UnknownVersion, UnknownTag, LengthMismatch, MalformedPayload };

inline const char* to_string(DecodeErrorKind k) noexcept {
  switch (k) {
    case DecodeErrorKind::BadMagic: return "bad magic";
    case DecodeErrorKind::BadChecksum: return "bad checksum";
    case DecodeErrorKind::UnknownVersion: return "unknown version";
    case DecodeErrorKind::UnknownTag: return "unknown tag";
    case DecodeErrorKind::LengthMismatch: return "length mismatch";
    case DecodeErrorKind::MalformedPayload: return "malformed payload";
  }
  return "?";
}

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string("decode: ") + to_string(kind) + ": " + detail), kind_(kind) {}
  DecodeErrorKind kind() const noexcept { return kind_; }

 private:
  DecodeErrorKind kind_;
};

struct Envelope {
  std::uint64_t session_id = 0;
  Message message;
  bool operator==(const Envelope&) const = default;
};

namespace wire_detail {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.insert(out_.end(), buf, buf + sizeof(T));
  }

  template <typename E>
    requires std::is_enum_v<E>
  void put_enum(E e) {
    put(static_cast<std::underlying_type_t<E>>(e));
  }

  void put_tensor(const Matrix<float>& m) {
    put(static_cast<std::uint32_t>(m.rows()));
    put(static_cast<std::uint32_t>(m.cols()));
    const auto v = m.values();
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out_.insert(out_.end(), p, p + v.size_bytes());
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <typename E>
  E get_enum(std::underlying_type_t<E> max_value, const char* field) {
    const auto raw = get<std::underlying_type_t<E>>();
    if (raw > max_value) {
      throw DecodeError(DecodeErrorKind::MalformedPayload,
                        std::string(field) + " value " + std::to_string(raw) + " out of range");
    }
    return static_cast<E>(raw);
  }

  Matrix<float> get_tensor() {
    const std::uint64_t rows = get<std::uint32_t>();
    const std::uint64_t cols = get<std::uint32_t>();
    const std::uint64_t bytes = rows * cols * 4;
    if (bytes > remaining()) {
      throw DecodeError(DecodeErrorKind::LengthMismatch, "tensor " + std::to_string(rows) + "x" +
                                                             std::to_string(cols) + " exceeds payload");
    }
    Matrix<float> m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    std::memcpy(m.values().data(), in_.data() + pos_, static_cast<std::size_t>(bytes));
    pos_ += static_cast<std::size_t>(bytes);
    return m;
  }

  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) throw DecodeError(DecodeErrorKind::LengthMismatch, "payload ends early");
  }

  void finish() const {
    if (remaining() != 0) {
      throw DecodeError(DecodeErrorKind::LengthMismatch, std::to_string(remaining()) + " trailing payload bytes");
    }
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline void encode_payload(Writer& w, const Hello& m) {
  w.put_enum(m.role);
  w.put_enum(m.topology);
  w.put(m.limb_index);
  w.put(m.config_digest);
}
inline void encode_payload(Writer& w, const BatchMeta& m) {
  w.put(m.epoch);
  w.put_enum(m.phase);
  w.put(m.batch_index);
  w.put(m.batch_count);
  w.put(static_cast<std::uint32_t>(m.sample_ids.size()));
  for (auto id : m.sample_ids) w.put(id);
}
inline void encode_payload(Writer& w, const Smashed& m) {
  w.put(m.limb_index);
  w.put_tensor(m.data);
}
inline void encode_payload(Writer& w, const SmashedGrad& m) {
  w.put(m.limb_index);
  w.put_tensor(m.data);
}
inline void encode_payload(Writer& w, const Labels& m) {
  if (m.data.cols() != 1 && !m.data.empty()) throw std::invalid_argument("encode: Labels must be a single column");
  w.put(static_cast<std::uint32_t>(m.data.rows()));
  for (float v : m.data.values()) w.put(v);
}
inline void encode_payload(Writer& w, const HeadActivations& m) { w.put_tensor(m.data); }
inline void encode_payload(Writer& w, const HeadGrad& m) { w.put_tensor(m.data); }
inline void encode_payload(Writer& w, const Metrics& m) {
  w.put(m.epoch);
  w.put_enum(m.split);
  w.put(m.loss);
  w.put(m.accuracy);
}
inline void encode_payload(Writer& w, const EndEpoch& m) { w.put(m.epoch); }
inline void encode_payload(Writer& w, const EndSession& m) { w.put(m.reason); }

inline Message decode_payload(std::uint16_t tag, Reader& r) {
  switch (tag) {
    case 1: {
      Hello m;
      m.role = r.get_enum<Role>(2, "role");
      m.topology = r.get_enum<Topology>(2, "topology");
      m.limb_index = r.get<std::uint16_t>();
      m.config_digest = r.get<std::uint64_t>();
      return m;
    }
    case 2: {
      BatchMeta m;
      m.epoch = r.get<std::uint32_t>();
      m.phase = r.get_enum<BatchPhase>(2, "batch phase");
      m.batch_index = r.get<std::uint32_t>();
      m.batch_count = r.get<std::uint32_t>();
      const std::uint64_t n = r.get<std::uint32_t>();
      if (n * 8 != r.remaining()) {
        throw DecodeError(DecodeErrorKind::LengthMismatch,
                          "batch of " + std::to_string(n) + " ids needs " + std::to_string(n * 8) + " bytes");
      }
      m.sample_ids.resize(static_cast<std::size_t>(n));
      for (auto& id : m.sample_ids) id = r.get<std::uint64_t>();
      return m;
    }
    case 3: {
      Smashed m;
      m.limb_index = r.get<std::uint16_t>();
      m.data = r.get_tensor();
      return m;
    }
    case 4: {
      SmashedGrad m;
      m.limb_index = r.get<std::uint16_t>();
      m.data = r.get_tensor();
      return m;
    }
    case 5: {
      const std::uint64_t rows = r.get<std::uint32_t>();
      if (rows * 4 != r.remaining()) {
        throw DecodeError(DecodeErrorKind::LengthMismatch, "labels row count disagrees with payload length");
      }
      Labels m{Matrix<float>(static_cast<std::size_t>(rows), 1)};
      for (float& v : m.data.values()) v = r.get<float>();
      return m;
    }
    case 6: return HeadActivations{r.get_tensor()};
    case 7: return HeadGrad{r.get_tensor()};
    case 8: {
      Metrics m;
      m.epoch = r.get<std::uint32_t>();
      m.split = r.get_enum<Split>(1, "split");
      m.loss = r.get<float>();
      m.accuracy = r.get<double>();
      return m;
    }
    case 9: return EndEpoch{r.get<std::uint32_t>()};
    case 10: return EndSession{r.get<std::uint32_t>()};
    default: throw DecodeError(DecodeErrorKind::UnknownTag, "message type " + std::to_string(tag));
  }
}

template <typename T>
T load_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace wire_detail

/// Canonical frame for `msg`.
inline std::vector<std::uint8_t> encode(const Message& msg, std::uint64_t session_id) {
  std::vector<std::uint8_t> out(kFrameMagic.begin(), kFrameMagic.end());
  wire_detail::Writer w(out);
  w.put(kWireVersion);
  w.put(message_tag(msg));
  w.put(std::uint16_t{0});
  w.put(session_id);
  w.put(std::uint32_t{0});  // payload_len, patched below
  std::visit([&](const auto& m) { wire_detail::encode_payload(w, m); }, msg);
  const std::size_t payload_len = out.size() - kFrameHeaderBytes;
  if (payload_len + kFrameHeaderBytes + kFrameTrailerBytes > kMaxFrameBytes) {
    throw std::length_error("encode: " + std::string(message_name(msg)) + " frame exceeds the 64 MiB limit");
  }
  const auto len32 = static_cast<std::uint32_t>(payload_len);
  std::memcpy(out.data() + 18, &len32, sizeof(len32));
  w.put(crc32_ieee(out));
  return out;
}

/// Validates a frame header and returns the total frame length it announces.
/// Needs at least kFrameHeaderBytes bytes.
inline std::size_t frame_length_from_header(std::span<const std::uint8_t> header) {
  if (header.size() < kFrameHeaderBytes) throw DecodeError(DecodeErrorKind::LengthMismatch, "short header");
  if (!std::equal(kFrameMagic.begin(), kFrameMagic.end(), header.begin())) {
    throw DecodeError(DecodeErrorKind::BadMagic, "frame does not start with SPLT");
  }
  const auto version = wire_detail::load_le<std::uint16_t>(header, 4);
  if (version != kWireVersion) {
    throw DecodeError(DecodeErrorKind::UnknownVersion, "version " + std::to_string(version));
  }
  const auto flags = wire_detail::load_le<std::uint16_t>(header, 8);
  if (flags != 0) throw DecodeError(DecodeErrorKind::UnknownVersion, "reserved flags " + std::to_string(flags));
  const std::uint64_t payload_len = wire_detail::load_le<std::uint32_t>(header, 18);
  const std::uint64_t total = payload_len + kFrameHeaderBytes + kFrameTrailerBytes;
  if (total > kMaxFrameBytes) {
    throw DecodeError(DecodeErrorKind::LengthMismatch, "announced frame of " + std::to_string(total) +
                                                           " bytes exceeds the 64 MiB limit");
  }
  return static_cast<std::size_t>(total);
}

/// Decodes exactly one complete frame or throws exactly one DecodeError.
inline Envelope decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < kFrameHeaderBytes + kFrameTrailerBytes) {
    if (frame.size() >= kFrameMagic.size() && !std::equal(kFrameMagic.begin(), kFrameMagic.end(), frame.begin())) {
      throw DecodeError(DecodeErrorKind::BadMagic, "frame does not start with SPLT");
    }
    throw DecodeError(DecodeErrorKind::LengthMismatch,
                      "frame of " + std::to_string(frame.size()) + " bytes is shorter than header and checksum");
  }
  const std::size_t total = frame_length_from_header(frame);
  if (total != frame.size()) {
    throw DecodeError(DecodeErrorKind::LengthMismatch, "header announces " + std::to_string(total) +
                                                           " bytes, frame has " + std::to_string(frame.size()));
  }
  const std::size_t body = total - kFrameTrailerBytes;
  const auto stored = wire_detail::load_le<std::uint32_t>(frame, body);
  if (crc32_ieee(frame.first(body)) != stored) throw DecodeError(DecodeErrorKind::BadChecksum, "CRC-32 mismatch");

  const auto tag = wire_detail::load_le<std::uint16_t>(frame, 6);
  Envelope env;
  env.session_id = wire_detail::load_le<std::uint64_t>(frame, 10);
  wire_detail::Reader r(frame.subspan(kFrameHeaderBytes, body - kFrameHeaderBytes));
  env.message = wire_detail::decode_payload(tag, r);
  r.finish();
  return env;
}

}  // namespace splitlimb
