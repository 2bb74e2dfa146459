#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace orbitkit {

using Shape = std::vector<std::int64_t>;

/// Thrown when tensor shapes (or image/latent dimensions) do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN/Inf or otherwise diverges.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// 64-byte aligned storage. Eigen picks its vectorized paths from pointer alignment, so
/// unaligned buffers give run-to-run differences in the last bits.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename Real>
using Storage = std::vector<Real, AlignedAllocator<Real>>;

/// Dense row-major array. Rank-0 (shape {}) holds a single scalar.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
    for (auto d : shape_)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, const std::vector<Real>& values)
      : Tensor(std::move(shape), Storage<Real>(values.begin(), values.end()), 0) {}

  Tensor(Shape shape, Storage<Real> values, int) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, Storage<Real>{v}, 0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Storage<Real>& storage() noexcept { return data_; }
  const Storage<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }
  Tensor reshaped(Shape shape) && {
    if (shape_numel(shape) != static_cast<std::int64_t>(data_.size()))
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    return std::move(*this);
  }

  template <typename To>
  Tensor<To> cast() const {
    Storage<To> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Real v) { return static_cast<To>(v); });
    return Tensor<To>(shape_, std::move(out), 0);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage<Real> data_;
};

template <typename Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename Real>
Real mean_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mean_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return static_cast<Real>(s / static_cast<double>(a.size()));
}

/// Generic axis permutation; out.shape[i] = in.shape[axes[i]].
template <typename Real>
Tensor<Real> permute(const Tensor<Real>& in, const std::vector<int>& axes) {
  const auto& s = in.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ShapeError("permute: axis count does not match rank of " + shape_str(s));
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::int64_t> strides(r);
  std::vector<bool> seen(r, false);
  for (std::size_t i = 0; i < r; ++i) {
    const int a = axes[i];
    if (a < 0 || static_cast<std::size_t>(a) >= r || seen[a]) throw ShapeError("permute: invalid axes");
    seen[a] = true;
    out_shape[i] = s[a];
    strides[i] = in_strides[a];
  }
  Tensor<Real> out(out_shape);
  if (r == 0) {
    out[0] = in[0];
    return out;
  }
  std::vector<std::int64_t> idx(r, 0);
  const Real* src = in.data();
  Real* dst = out.data();
  const std::int64_t inner = out_shape[r - 1];
  const std::int64_t inner_stride = strides[r - 1];
  const std::int64_t outer = static_cast<std::int64_t>(out.size()) / inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (std::size_t i = 0; i + 1 < r; ++i) off += idx[i] * strides[i];
    for (std::int64_t j = 0; j < inner; ++j) *dst++ = src[off + j * inner_stride];
    for (std::size_t i = r - 1; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

inline std::vector<int> inverse_axes(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
  return inv;
}

}  // namespace orbitkit
