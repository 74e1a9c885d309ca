#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

#include <zlib.h>

namespace splitlimb {

static_assert(std::endian::native == std::endian::little,
              "wire and checksum formats assume a little-endian host");

/// Incremental 64-bit FNV-1a.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ull;
  static constexpr std::uint64_t kPrime = 0x100000001b3ull;

  constexpr void update(std::span<const std::uint8_t> bytes) noexcept {
    for (std::uint8_t b : bytes) {
      hash_ ^= b;
      hash_ *= kPrime;
    }
  }

  void update(std::string_view text) noexcept {
    update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  // Little-endian byte image of each value.
  template <typename T>
  void update_values(std::span<const T> values) noexcept {
    update(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
  }

  constexpr std::uint64_t value() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = kOffset;
};

inline std::uint64_t fnv1a64(std::string_view text) noexcept {
  Fnv1a64 h;
  h.update(text);
  return h.value();
}

// IEEE 802.3 CRC-32 (zlib polynomial).
inline std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; frames are capped well below 4 GiB.
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace splitlimb
