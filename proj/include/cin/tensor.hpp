// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cin/error.hpp"

namespace cin {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Shape with the leading extent removed (frame shape of a clip).
inline Shape tail(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tail of a rank-0 shape");
  return Shape(shape.begin() + 1, shape.end());
}

/// Shape with `n` prepended (clip shape from a frame shape).
inline Shape prepend(std::size_t n, const Shape& shape) {
  Shape out;
  out.reserve(shape.size() + 1);
  out.push_back(n);
  out.insert(out.end(), shape.begin(), shape.end());
  return out;
}

/// Dense row-major n-dimensional array. Element type is the template
/// parameter; `float` and `double` are the supported instantiations.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), T{0}) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range");
    return shape_[axis];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const T& operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw DimensionError("index rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) throw DimensionError("index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& x) {
  return Tensor<T>(x.shape());
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Row-major matrix product of [m x k] and [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * n;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::size_t r = x.extent(0), c = x.extent(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

// ---------------------------------------------------------------------------
// Spatial convolution
// ---------------------------------------------------------------------------

struct Padding2d {
  std::size_t h = 0;
  std::size_t w = 0;
};

namespace detail {

/// out[C_out x Ho x Wo] += cross-correlation of x[C_in x H x W] with
/// w[C_out x C_in x KH x KW], stride 1, zero padding `pad`.
template <typename T>
void conv_spatial_accumulate(std::span<const T> x, std::size_t c_in, std::size_t h,
                             std::size_t w, std::span<const T> weight, std::size_t c_out,
                             std::size_t kh, std::size_t kw, Padding2d pad, std::span<T> out) {
  const std::size_t ho = h + 2 * pad.h - kh + 1;
  const std::size_t wo = w + 2 * pad.w - kw + 1;
  for (std::size_t co = 0; co < c_out; ++co) {
    T* plane = out.data() + co * ho * wo;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const T* xin = x.data() + ci * h * w;
      const T* wk = weight.data() + (co * c_in + ci) * kh * kw;
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          const T wv = wk[a * kw + b];
          // input row = oh + a - pad.h, input col = ow + b - pad.w
          const std::size_t ow_lo = pad.w > b ? pad.w - b : 0;
          const std::size_t ow_hi = std::min(wo, w + pad.w - b);
          for (std::size_t oh = 0; oh < ho; ++oh) {
            if (oh + a < pad.h || oh + a - pad.h >= h) continue;
            const T* xrow = xin + (oh + a - pad.h) * w;
            T* orow = plane + oh * wo;
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow + b - pad.w];
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Shape conv_spatial_out_shape(const Shape& x, const Shape& w, Padding2d pad) {
  if (x.size() != 3 || w.size() != 4 || w[1] != x[0]) {
    throw DimensionError("conv_spatial: input " + to_string(x) + " incompatible with kernel " +
                         to_string(w));
  }
  if (w[2] > x[1] + 2 * pad.h || w[3] > x[2] + 2 * pad.w) {
    throw DimensionError("conv_spatial: kernel " + to_string(w) + " larger than padded input " +
                         to_string(x));
  }
  return {w[0], x[1] + 2 * pad.h - w[2] + 1, x[2] + 2 * pad.w - w[3] + 1};
}

/// Cross-correlation (no kernel flip) of x[C_in x H x W] with
/// w[C_out x C_in x K_H x K_W]; stride 1, zero padding.
template <typename T>
Tensor<T> conv_spatial(const Tensor<T>& x, const Tensor<T>& w, Padding2d pad = {}) {
  Tensor<T> out(conv_spatial_out_shape(x.shape(), w.shape(), pad));
  detail::conv_spatial_accumulate<T>(x.data(), x.extent(0), x.extent(1), x.extent(2), w.data(),
                                     w.extent(0), w.extent(2), w.extent(3), pad, out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F f, const char* name) {
  if (b.rank() == 0) {
    Tensor<T> out(a.shape());
    const T s = b[0];
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], s);
    return out;
  }
  if (a.rank() == 0) {
    Tensor<T> out(b.shape());
    const T s = a[0];
    for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(s, b[i]);
    return out;
  }
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": incompatible shapes " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(a, b, std::plus<T>(), "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(a, b, std::minus<T>(), "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(a, b, std::multiplies<T>(), "mul");
}
template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::map(x, [s](T v) { return v * s; });
}
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return std::exp(v); });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return v > T{0} ? v : T{0}; });
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  if (acc.shape() != x.shape()) {
    throw DimensionError("add: incompatible shapes " + to_string(acc.shape()) + " and " +
                         to_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += x[i];
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { kSum, kMean, kMax };

/// Reduces `axis` away; the result has rank one less than `x`.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(x.rank()));
  }
  const Shape& s = x.shape();
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t len = s[axis];
  const std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + axis);
  Tensor<T> out(out_shape);
  if (len == 0 && op == ReduceOp::kMax) throw DimensionError("reduce max over an empty axis");
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const T* base = x.data().data() + o * len * inner + i;
      T acc = op == ReduceOp::kMax ? base[0] : T{0};
      for (std::size_t r = 0; r < len; ++r) {
        const T v = base[r * inner];
        if (op == ReduceOp::kMax) {
          acc = std::max(acc, v);
        } else {
          acc += v;
        }
      }
      if (op == ReduceOp::kMean) acc /= static_cast<T>(len);
      out[o * inner + i] = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  return reduce(ReduceOp::kSum, x, axis);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  return reduce(ReduceOp::kMean, x, axis);
}
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::size_t axis) {
  return reduce(ReduceOp::kMax, x, axis);
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  return x.reshaped(std::move(shape));
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.extent(axis)) {
    throw DimensionError("slice: range out of bounds for shape " + to_string(x.shape()));
  }
  const Shape& s = x.shape();
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  std::vector<T> data;
  data.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.data().data() + (o * s[axis] + begin) * inner;
    data.insert(data.end(), src, src + (end - begin) * inner);
  }
  return Tensor<T>(std::move(out_shape), std::move(data));
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw DimensionError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw DimensionError("concat: incompatible shapes");
    out_shape[axis] += p.extent(axis);
  }
  const std::size_t outer = numel(Shape(out_shape.begin(), out_shape.begin() + axis));
  const std::size_t inner = numel(Shape(out_shape.begin() + axis + 1, out_shape.end()));
  std::vector<T> data;
  data.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::size_t chunk = p.extent(axis) * inner;
      const T* src = p.data().data() + o * chunk;
      data.insert(data.end(), src, src + chunk);
    }
  }
  return Tensor<T>(std::move(out_shape), std::move(data));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  return concat(std::span<const Tensor<T>>(parts), axis);
}

/// Stacks equally shaped frames along a new leading axis. `frame_shape` is
/// used when `frames` is empty.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& frames, const Shape& frame_shape) {
  std::vector<T> data;
  data.reserve(frames.size() * numel(frame_shape));
  for (const auto& f : frames) {
    if (f.shape() != frame_shape) {
      throw DimensionError("stack: frame shape " + to_string(f.shape()) + " != " +
                           to_string(frame_shape));
    }
    data.insert(data.end(), f.data().begin(), f.data().end());
  }
  return Tensor<T>(prepend(frames.size(), frame_shape), std::move(data));
}

/// Index `t` along the leading axis.
template <typename T>
Tensor<T> frame(const Tensor<T>& clip, std::size_t t) {
  if (clip.rank() == 0 || t >= clip.extent(0)) throw DimensionError("frame index out of range");
  Shape fs = tail(clip.shape());
  const std::size_t n = numel(fs);
  const T* src = clip.data().data() + t * n;
  return Tensor<T>(std::move(fs), std::vector<T>(src, src + n));
}

template <typename T, typename U>
Tensor<T> cast(const Tensor<U>& x) {
  std::vector<T> data(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) data[i] = static_cast<T>(x[i]);
  return Tensor<T>(x.shape(), std::move(data));
}

/// Serializes values as a flat little-endian IEEE-754 f32 array. The shape
/// travels separately.
template <typename T>
std::vector<std::uint8_t> to_f32_blob(const Tensor<T>& x) {
  std::vector<std::uint8_t> out(x.size() * 4);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(x[i]));
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

template <typename T>
Tensor<T> from_f32_blob(std::span<const std::uint8_t> bytes, Shape shape) {
  const std::size_t n = numel(shape);
  if (bytes.size() != n * 4) {
    throw DimensionError("blob holds " + std::to_string(bytes.size()) + " bytes, shape " +
                         to_string(shape) + " needs " + std::to_string(n * 4));
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    data[i] = static_cast<T>(std::bit_cast<float>(bits));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace cin
