#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <type_traits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitlimb {

/// Raised when operand dimensions do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a layer is driven out of order (backward without forward).
class ProtocolOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a value that must be finite is not.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix; rows are batch entries, columns are features.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw ShapeError("ragged initializer for matrix");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::string shape() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix&) const = default;

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
[[noreturn]] void shape_mismatch(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.shape() << " and " << b.shape();
  throw ShapeError(os.str());
}

}  // namespace detail

namespace kernel {

// 4 x 16 register tiles for float products. Each output element keeps its own
// running sum, starting at +0 and adding its terms in ascending reduction
// order (a partial sum parked in memory between chunks is the same float), so
// the result is bit-identical to the plain loops below.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wpsabi"
typedef float f32x8 __attribute__((vector_size(32)));

inline f32x8 load8(const float* p) noexcept {
  f32x8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(float* p, f32x8 v) noexcept { std::memcpy(p, &v, sizeof v); }

inline constexpr std::size_t kRows = 4;
inline constexpr std::size_t kCols = 16;
inline constexpr std::size_t kDepth = 256;  // reduction chunk; keeps a b panel in L1

// out[r, 0..16] += sum over k in [0, kk) of a[r, k] * b[k, 0..16] for r < 4,
// continuing the running sums already stored in out. a[r, k] sits at
// a[r * a_row_step + k * a_k_step].
inline void tile(const float* a, std::size_t a_row_step, std::size_t a_k_step, const float* b, std::size_t ldb,
                 std::size_t kk, float* out, std::size_t ldo) noexcept {
  f32x8 c[kRows][2];
  for (std::size_t r = 0; r < kRows; ++r) {
    c[r][0] = load8(out + r * ldo);
    c[r][1] = load8(out + r * ldo + 8);
  }
  for (std::size_t k = 0; k < kk; ++k) {
    const f32x8 b0 = load8(b + k * ldb);
    const f32x8 b1 = load8(b + k * ldb + 8);
    const float* ak = a + k * a_k_step;
    for (std::size_t r = 0; r < kRows; ++r) {
      const float av = ak[r * a_row_step];
      c[r][0] = c[r][0] + av * b0;
      c[r][1] = c[r][1] + av * b1;
    }
  }
  for (std::size_t r = 0; r < kRows; ++r) {
    store8(out + r * ldo, c[r][0]);
    store8(out + r * ldo + 8, c[r][1]);
  }
}

// out[0..rows, 0..cols] (rows, cols multiples of the tile) += a * b over the
// full reduction, chunked so each b panel is reused across all row tiles.
inline void tiled_product(const float* a, std::size_t a_row_step, std::size_t a_k_step, const float* b,
                          std::size_t ldb, std::size_t kk, float* out, std::size_t ldo, std::size_t rows,
                          std::size_t cols) noexcept {
  for (std::size_t k0 = 0; k0 < kk; k0 += kDepth) {
    const std::size_t depth = std::min(kDepth, kk - k0);
    for (std::size_t j = 0; j < cols; j += kCols)
      for (std::size_t i = 0; i < rows; i += kRows)
        tile(a + i * a_row_step + k0 * a_k_step, a_row_step, a_k_step, b + k0 * ldb + j, ldb, depth,
             out + i * ldo + j, ldo);
  }
}

#pragma GCC diagnostic pop

}  // namespace kernel

// Every product below fixes the summation order of each output element to the
// ascending order of its reduction index, starting from +0. The loop nests are
// arranged so the innermost loop runs over independent outputs, which keeps
// that order while letting the compiler vectorize.

/// a[m x k] * b[k x n]
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a, b);
  const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
  Matrix<T> out(m, n);
  std::size_t m0 = 0, n0 = 0;
  if constexpr (std::is_same_v<T, float>) {
    m0 = m - m % kernel::kRows;
    n0 = n - n % kernel::kCols;
    kernel::tiled_product(a.data(), kk, 1, b.data(), n, kk, out.data(), n, m0, n0);
  }
  // Remaining rows (all columns) and the column tail of tiled rows.
  for (std::size_t k = 0; k < kk; ++k) {
    const T* __restrict brow = b.row(k).data();
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a(i, k);
      T* __restrict orow = out.row(i).data();
      for (std::size_t j = i < m0 ? n0 : 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// transpose(a)[k x m] * b[m x n], reduction over the shared row index.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) detail::shape_mismatch("matmul_tn", a, b);
  const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
  Matrix<T> out(kk, n);
  std::size_t p0 = 0, n0 = 0;
  if constexpr (std::is_same_v<T, float>) {
    p0 = kk - kk % kernel::kRows;
    n0 = n - n % kernel::kCols;
    kernel::tiled_product(a.data(), 1, kk, b.data(), n, m, out.data(), n, p0, n0);
  }
  for (std::size_t p = 0; p < kk; ++p) {
    T* __restrict orow = out.row(p).data();
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a(i, p);
      const T* __restrict brow = b.row(i).data();
      for (std::size_t j = p < p0 ? n0 : 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// a[m x n] * transpose(b)[n x k], reduction over the shared column index.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) detail::shape_mismatch("matmul_nt", a, b);
  const std::size_t m = a.rows(), n = a.cols(), kk = b.rows();
  Matrix<T> out(m, kk);
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.row(i).data();
    for (std::size_t p = 0; p < kk; ++p) {
      const T* brow = b.row(p).data();
      T acc{};
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      out(i, p) = acc;
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

/// Column-wise concatenation; all parts must have the same row count.
template <typename T>
Matrix<T> hconcat(std::span<const Matrix<T>> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) detail::shape_mismatch("hconcat", parts.front(), p);
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.row(r).data();
    for (const auto& p : parts) dst = std::copy(p.row(r).begin(), p.row(r).end(), dst);
  }
  return out;
}

/// Columns [start, start + width) of `a`.
template <typename T>
Matrix<T> column_slice(const Matrix<T>& a, std::size_t start, std::size_t width) {
  if (start + width > a.cols()) {
    throw ShapeError("column_slice [" + std::to_string(start) + ", " + std::to_string(start + width) +
                     ") out of range for " + a.shape());
  }
  Matrix<T> out(a.rows(), width);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto src = a.row(r).subspan(start, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
bool all_finite(std::span<const T> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace splitlimb
