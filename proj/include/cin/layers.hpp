// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

template <typename T>
class Identity final : public StatelessModule<T> {
 public:
  std::string kind() const override { return "identity"; }
  Shape out_frame_shape(const Shape& in) const override { return in; }
  Tensor<T> forward_frame(const Tensor<T>& x) const override { return x; }
  Cost frame_cost(const Shape&) const override { return {}; }
};

template <typename T>
class ReLU final : public StatelessModule<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape out_frame_shape(const Shape& in) const override { return in; }
  Tensor<T> forward_frame(const Tensor<T>& x) const override { return relu(x); }
  Cost frame_cost(const Shape& in) const override { return {0, numel(in)}; }
};

/// Channel mixing along axis 0 of a frame: [c_in, ...] -> [c_out, ...].
/// Serves as the classifier of a prediction head and as the pointwise
/// projection of residual shortcuts.
template <typename T>
class Linear final : public StatelessModule<T> {
 public:
  /// weight [c_out x c_in]; bias [c_out] or an empty tensor for none.
  Linear(Tensor<T> weight, Tensor<T> bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rank() != 2) throw DimensionError("linear: weight must be [c_out, c_in]");
    if (!bias_.empty() && bias_.shape() != Shape{weight_.extent(0)}) {
      throw DimensionError("linear: bias must be [c_out]");
    }
  }

  std::size_t c_in() const { return weight_.extent(1); }
  std::size_t c_out() const { return weight_.extent(0); }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

  std::string kind() const override { return "linear"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in.empty() || in[0] != c_in()) {
      throw DimensionError("linear: frame " + to_string(in) + " does not lead with " +
                           std::to_string(c_in()) + " channels");
    }
    Shape out = in;
    out[0] = c_out();
    return out;
  }
  Tensor<T> forward_frame(const Tensor<T>& x) const override {
    const Shape out_shape = out_frame_shape(x.shape());
    const std::size_t rest = x.size() / c_in();
    Tensor<T> y = matmul(weight_, x.reshaped({c_in(), rest}));
    if (!bias_.empty()) {
      for (std::size_t o = 0; o < c_out(); ++o)
        for (std::size_t i = 0; i < rest; ++i) y[o * rest + i] += bias_[o];
    }
    return y.reshaped(out_shape);
  }
  Cost frame_cost(const Shape& in) const override {
    const std::uint64_t rest = numel(in) / c_in();
    return {c_out() * c_in() * rest, bias_.empty() ? 0 : c_out() * rest};
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

/// Mean over every non-channel axis: [c, ...] -> [c].
template <typename T>
class SpatialMean final : public StatelessModule<T> {
 public:
  std::string kind() const override { return "spatial_mean"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in.empty()) throw DimensionError("spatial_mean: frame needs a channel axis");
    return {in[0]};
  }
  Tensor<T> forward_frame(const Tensor<T>& x) const override {
    return mean(x.reshaped({x.extent(0), x.size() / x.extent(0)}), 1);
  }
  Cost frame_cost(const Shape& in) const override { return {0, numel(in)}; }
};

}  // namespace cin
