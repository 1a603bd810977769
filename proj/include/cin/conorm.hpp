// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

inline constexpr double kDefaultNormEps = 1e-5;

/// Inference-mode batch normalization with frozen statistics.
template <typename T>
struct BatchNormSpec {
  Tensor<T> gamma, beta, running_mean, running_var;
  T eps = static_cast<T>(kDefaultNormEps);

  std::size_t channels() const { return gamma.size(); }

  void validate() const {
    const Shape s{gamma.size()};
    if (gamma.shape() != s || beta.shape() != s || running_mean.shape() != s ||
        running_var.shape() != s) {
      throw DimensionError("batchnorm: parameters must all be [channels]");
    }
    if (!(eps > T{0})) throw ArgumentError("batchnorm: eps must be > 0");
    for (std::size_t i = 0; i < running_var.size(); ++i)
      if (running_var[i] < T{0}) throw ArgumentError("batchnorm: running_var must be >= 0");
  }

  static BatchNormSpec identity(std::size_t channels) {
    return {Tensor<T>({channels}, T{1}), Tensor<T>({channels}), Tensor<T>({channels}),
            Tensor<T>({channels}, T{1})};
  }
};

template <typename T>
struct LayerNormSpec {
  Tensor<T> gamma, beta;
  T eps = static_cast<T>(kDefaultNormEps);

  std::size_t features() const { return gamma.size(); }

  void validate() const {
    if (gamma.rank() != 1 || beta.shape() != gamma.shape()) {
      throw DimensionError("layernorm: gamma and beta must both be [d]");
    }
    if (!(eps > T{0})) throw ArgumentError("layernorm: eps must be > 0");
  }

  static LayerNormSpec identity(std::size_t d) {
    return {Tensor<T>({d}, T{1}), Tensor<T>({d})};
  }
};

/// (x - mean) / sqrt(var + eps) * gamma + beta per channel along
/// `channel_axis`.
template <typename T>
Tensor<T> bn_apply(const BatchNormSpec<T>& spec, const Tensor<T>& x, std::size_t channel_axis = 0) {
  if (channel_axis >= x.rank() || x.extent(channel_axis) != spec.channels()) {
    throw DimensionError("batchnorm: channel axis of " + to_string(x.shape()) +
                         " does not match " + std::to_string(spec.channels()) + " channels");
  }
  const Shape& s = x.shape();
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + channel_axis));
  const std::size_t c = s[channel_axis];
  const std::size_t inner = numel(Shape(s.begin() + channel_axis + 1, s.end()));
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T inv = T{1} / std::sqrt(spec.running_var[ch] + spec.eps);
      const T m = spec.running_mean[ch], g = spec.gamma[ch], b = spec.beta[ch];
      const std::size_t base = (o * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = (x[base + i] - m) * inv * g + b;
    }
  }
  return out;
}

/// Normalizes over the last axis with the biased sample variance.
template <typename T>
Tensor<T> ln_apply(const LayerNormSpec<T>& spec, const Tensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() != spec.features()) {
    throw DimensionError("layernorm: last axis of " + to_string(x.shape()) + " != " +
                         std::to_string(spec.features()));
  }
  const std::size_t d = spec.features();
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * d;
    double mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(spec.eps));
    for (std::size_t i = 0; i < d; ++i) {
      out[r * d + i] = static_cast<T>((row[i] - mu) * inv) * spec.gamma[i] + spec.beta[i];
    }
  }
  return out;
}

/// Normalization momentum for step-wise updates that matches the running
/// statistics of full-sequence updates with momentum `m_seq` over
/// sequences of length `length`:  2 / (L (2 / m_seq - 1) + 1).
inline double step_momentum(double m_seq, long long length) {
  if (!(m_seq > 0.0 && m_seq <= 1.0)) throw ArgumentError("step_momentum: m_seq must be in (0, 1]");
  if (length < 1) throw ArgumentError("step_momentum: length must be >= 1");
  return 2.0 / (static_cast<double>(length) * (2.0 / m_seq - 1.0) + 1.0);
}

inline Cost bn_cost(std::size_t elements) { return {elements, elements}; }
inline Cost ln_cost(std::size_t rows, std::size_t d) {
  // mean, centering, squares, variance, scale, affine
  return {rows * 2 * d, rows * (3 * d + 3)};
}

/// Batch norm over channel axis 0 of each frame.
template <typename T>
class BatchNorm final : public StatelessModule<T> {
 public:
  explicit BatchNorm(BatchNormSpec<T> spec) : spec_(std::move(spec)) { spec_.validate(); }
  const BatchNormSpec<T>& spec() const { return spec_; }

  std::string kind() const override { return "batchnorm"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in.empty() || in[0] != spec_.channels()) {
      throw DimensionError("batchnorm: frame " + to_string(in) + " does not lead with " +
                           std::to_string(spec_.channels()) + " channels");
    }
    return in;
  }
  Tensor<T> forward_frame(const Tensor<T>& x) const override { return bn_apply(spec_, x, 0); }
  Cost frame_cost(const Shape& in) const override { return bn_cost(numel(in)); }

 private:
  BatchNormSpec<T> spec_;
};

template <typename T>
class LayerNorm final : public StatelessModule<T> {
 public:
  explicit LayerNorm(LayerNormSpec<T> spec) : spec_(std::move(spec)) { spec_.validate(); }
  const LayerNormSpec<T>& spec() const { return spec_; }

  std::string kind() const override { return "layernorm"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in.empty() || in.back() != spec_.features()) {
      throw DimensionError("layernorm: frame " + to_string(in) + " does not end with " +
                           std::to_string(spec_.features()));
    }
    return in;
  }
  Tensor<T> forward_frame(const Tensor<T>& x) const override { return ln_apply(spec_, x); }
  Cost frame_cost(const Shape& in) const override {
    return ln_cost(numel(in) / spec_.features(), spec_.features());
  }

 private:
  LayerNormSpec<T> spec_;
};

}  // namespace cin
