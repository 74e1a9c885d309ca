#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitlimb {

/// Single-channel image with intensities in [0, 1], row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}
  GrayImage(std::size_t w, std::size_t h, std::vector<float> px) : width(w), height(h), pixels(std::move(px)) {
    if (pixels.size() != width * height) throw std::invalid_argument("GrayImage: pixel count does not match dimensions");
  }

  float& at(std::size_t x, std::size_t y) noexcept { return pixels[y * width + x]; }
  float at(std::size_t x, std::size_t y) const noexcept { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Interleaved 8-bit RGB to luma in [0, 1]: (0.299 R + 0.587 G + 0.114 B) / 255,
/// evaluated in double, clamped, then narrowed to float.
inline GrayImage to_grayscale(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw std::invalid_argument("to_grayscale: dimensions must be positive");
  if (rgb.size() < width * height * 3) {
    throw std::invalid_argument("to_grayscale: truncated pixel buffer (" + std::to_string(rgb.size()) +
                                " bytes for " + std::to_string(width) + "x" + std::to_string(height) + ")");
  }
  GrayImage out(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    const double luma = (0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2]) / 255.0;
    out.pixels[i] = static_cast<float>(std::clamp(luma, 0.0, 1.0));
  }
  return out;
}

/// 8-bit gray samples divided by 255.
inline GrayImage from_bytes(std::span<const std::uint8_t> gray, std::size_t width, std::size_t height) {
  if (gray.size() < width * height) throw std::invalid_argument("from_bytes: truncated pixel buffer");
  GrayImage out(width, height);
  for (std::size_t i = 0; i < width * height; ++i) out.pixels[i] = static_cast<float>(gray[i] / 255.0);
  return out;
}

/// Bilinear resampling with half-pixel-centre mapping
/// src = (dst + 0.5) * src_len / dst_len - 0.5, clamped to the valid range.
/// Interpolation is a + (b - a) * t, so equal neighbours reproduce exactly.
inline GrayImage resize_bilinear(const GrayImage& img, std::size_t out_w, std::size_t out_h) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("resize_bilinear: empty source image");
  if (out_w == 0 || out_h == 0) throw std::invalid_argument("resize_bilinear: output dimensions must be positive");

  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t src_len, std::size_t dst_len) {
    std::vector<Tap> out(dst_len);
    const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
    for (std::size_t d = 0; d < dst_len; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, src_len - 1);
      out[d] = {i0, i1, s - static_cast<double>(i0)};
    }
    return out;
  };
  const auto xs = taps(img.width, out_w);
  const auto ys = taps(img.height, out_h);

  GrayImage out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, tx] = xs[x];
      const auto [y0, y1, ty] = ys[y];
      const double a = img.at(x0, y0), b = img.at(x1, y0);
      const double c = img.at(x0, y1), d = img.at(x1, y1);
      const double top = a + (b - a) * tx;
      const double bottom = c + (d - c) * tx;
      out.at(x, y) = static_cast<float>(std::clamp(top + (bottom - top) * ty, 0.0, 1.0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)

enum class PgmErrorKind { MalformedMagic, UnsupportedFormat, MalformedHeader, DimensionOverflow, TruncatedPayload };

inline const char* to_string(PgmErrorKind k) noexcept {
  switch (k) {
    case PgmErrorKind::MalformedMagic: return "malformed magic";
    case PgmErrorKind::UnsupportedFormat: return "unsupported format";
    case PgmErrorKind::MalformedHeader: return "malformed header";
    case PgmErrorKind::DimensionOverflow: return "dimension overflow";
    case PgmErrorKind::TruncatedPayload: return "truncated payload";
  }
  return "unknown";
}

class PgmError : public std::runtime_error {
 public:
  PgmError(PgmErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string("pgm: ") + to_string(kind) + ": " + detail), kind_(kind) {}
  PgmErrorKind kind() const noexcept { return kind_; }

 private:
  PgmErrorKind kind_;
};

// Each side is capped so width * height stays far from overflow.
inline constexpr std::size_t kMaxPgmSide = 1u << 15;

inline GrayImage load_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || !std::isdigit(bytes[1])) {
    throw PgmError(PgmErrorKind::MalformedMagic, "expected 'P5'");
  }
  if (bytes[1] != '5') {
    throw PgmError(PgmErrorKind::UnsupportedFormat, std::string("magic P") + static_cast<char>(bytes[1]) +
                                                        " is not binary graymap P5");
  }
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* field, std::size_t limit, PgmErrorKind too_large) -> std::size_t {
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
      throw PgmError(PgmErrorKind::MalformedHeader, std::string("missing whitespace before ") + field);
    }
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw PgmError(PgmErrorKind::MalformedHeader, std::string("expected decimal ") + field);
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > limit) throw PgmError(too_large, std::string(field) + " too large");
      ++pos;
    }
    return v;
  };
  const std::size_t width = read_number("width", kMaxPgmSide, PgmErrorKind::DimensionOverflow);
  const std::size_t height = read_number("height", kMaxPgmSide, PgmErrorKind::DimensionOverflow);
  // Netpbm allows maxval up to 65535; anything above is not a PGM at all.
  const std::size_t maxval = read_number("maxval", 65535, PgmErrorKind::MalformedHeader);
  if (width == 0 || height == 0) throw PgmError(PgmErrorKind::MalformedHeader, "zero dimension");
  if (maxval != 255) {
    throw PgmError(PgmErrorKind::UnsupportedFormat, "maxval " + std::to_string(maxval) + " (only 255 supported)");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw PgmError(PgmErrorKind::MalformedHeader, "missing whitespace after maxval");
  }
  ++pos;
  const std::size_t need = width * height;
  if (bytes.size() - pos < need) {
    throw PgmError(PgmErrorKind::TruncatedPayload,
                   std::to_string(bytes.size() - pos) + " of " + std::to_string(need) + " pixel bytes present");
  }
  return from_bytes(bytes.subspan(pos, need), width, height);
}

inline std::uint8_t quantize_u8(float v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

/// Canonical header "P5\n<w> <h>\n255\n" followed by round(p * 255).
inline std::vector<std::uint8_t> save_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.pixels.size());
  for (float p : img.pixels) out.push_back(quantize_u8(p));
  return out;
}

}  // namespace splitlimb
