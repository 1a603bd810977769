// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

/// Where a continual convolution keeps its temporal cache.
///  - kPre:  input frames are cached and convolved once the window is
///           complete (direct-form FIR).
///  - kPost: every input frame is convolved with all temporal taps eagerly
///           and the partial sums are cached until their window completes
///           (transposed-form FIR).
///  - kAuto: whichever needs fewer cached elements for the frame geometry.
enum class CacheForm { kPre, kPost, kAuto };

inline const char* to_string(CacheForm f) {
  switch (f) {
    case CacheForm::kPre: return "pre";
    case CacheForm::kPost: return "post";
    case CacheForm::kAuto: return "auto";
  }
  return "?";
}

struct CoConvParams {
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t k_t = 1;
  std::size_t k_h = 1;
  std::size_t k_w = 1;
  std::size_t dilation = 1;  // temporal
  std::size_t padding = 0;   // leading temporal zero frames
  std::size_t stride = 1;    // temporal
  Padding2d spatial_padding{};
  CacheForm form = CacheForm::kAuto;
};

/// Immutable continual 3D convolution: weights [c_out x c_in x k_t x k_h x k_w]
/// and bias [c_out].
///
/// Temporal convention: output j covers the effective input frames
/// e[j], e[j + d], ..., e[j + (k_t - 1) d] where e is the input prefixed with
/// `padding` zero frames, and weight tap k multiplies e[j + k d]. Tap
/// k_t - 1 therefore touches the newest frame. There is never any trailing
/// padding.
template <typename T>
class CoConvSpec {
 public:
  CoConvSpec(CoConvParams p, Tensor<T> weights, Tensor<T> bias)
      : p_(p), weights_(std::move(weights)), bias_(std::move(bias)) {
    if (p_.c_in == 0 || p_.c_out == 0 || p_.k_t == 0 || p_.k_h == 0 || p_.k_w == 0) {
      throw ArgumentError("conv3d: channel counts and kernel extents must be >= 1");
    }
    if (p_.dilation == 0) throw ArgumentError("conv3d: dilation must be >= 1");
    if (p_.stride == 0) throw ArgumentError("conv3d: stride must be >= 1");
    if (p_.padding + 1 > receptive_field()) {
      throw ArgumentError("conv3d: temporal padding " + std::to_string(p_.padding) +
                          " exceeds receptive field - 1 = " +
                          std::to_string(receptive_field() - 1));
    }
    const Shape ws{p_.c_out, p_.c_in, p_.k_t, p_.k_h, p_.k_w};
    if (weights_.shape() != ws) {
      throw DimensionError("conv3d: weight shape " + to_string(weights_.shape()) +
                           " != " + to_string(ws));
    }
    if (bias_.shape() != Shape{p_.c_out}) throw DimensionError("conv3d: bias must be [c_out]");
    // Split into per-tap spatial kernels [c_out x c_in x k_h x k_w].
    const std::size_t plane = p_.k_h * p_.k_w;
    for (std::size_t k = 0; k < p_.k_t; ++k) {
      Tensor<T> tap({p_.c_out, p_.c_in, p_.k_h, p_.k_w});
      for (std::size_t o = 0; o < p_.c_out; ++o)
        for (std::size_t i = 0; i < p_.c_in; ++i)
          for (std::size_t s = 0; s < plane; ++s)
            tap[(o * p_.c_in + i) * plane + s] =
                weights_[((o * p_.c_in + i) * p_.k_t + k) * plane + s];
      taps_.push_back(std::move(tap));
    }
  }

  const CoConvParams& params() const noexcept { return p_; }
  const Tensor<T>& weights() const noexcept { return weights_; }
  const Tensor<T>& bias() const noexcept { return bias_; }
  const Tensor<T>& tap(std::size_t k) const { return taps_.at(k); }

  std::size_t receptive_field() const { return p_.k_t + (p_.k_t - 1) * (p_.dilation - 1); }

  /// Output frame shape for an input frame [c_in x H x W].
  Shape out_frame_shape(const Shape& in) const {
    if (in.size() != 3 || in[0] != p_.c_in) {
      throw DimensionError("conv3d: expected frame [" + std::to_string(p_.c_in) +
                           ",H,W], got " + to_string(in));
    }
    return conv_spatial_out_shape(in, taps_[0].shape(), p_.spatial_padding);
  }

 private:
  CoConvParams p_;
  Tensor<T> weights_;
  Tensor<T> bias_;
  std::vector<Tensor<T>> taps_;
};

/// Steps between a frame's arrival and the emission of its aligned output.
template <typename T>
std::size_t delay(const CoConvSpec<T>& spec) {
  return spec.receptive_field() - spec.params().padding - 1;
}

struct CacheSizes {
  std::size_t pre = 0;
  std::size_t post = 0;
  CacheForm chosen = CacheForm::kPre;
};

/// Cached element counts of both arrangements; ties go to pre-caching.
template <typename T>
CacheSizes cache_elements(const CoConvSpec<T>& spec, const Shape& frame_shape) {
  const Shape out = spec.out_frame_shape(frame_shape);
  const std::size_t slots = spec.receptive_field() - 1;
  CacheSizes c{slots * numel(frame_shape), slots * numel(out), CacheForm::kPre};
  c.chosen = c.pre <= c.post ? CacheForm::kPre : CacheForm::kPost;
  return c;
}

template <typename T>
struct CoConvState : State {
  CacheForm form = CacheForm::kAuto;  // resolved on the first frame
  Shape frame_shape;
  Shape out_shape;
  std::size_t steps_seen = 0;
  std::size_t prefilled = 0;
  // pre: most recent input frames, oldest first.
  // post: partial sums; fifo[s] completes s steps after the next input.
  //       An empty tensor marks a window that is never emitted.
  std::deque<Tensor<T>> fifo;
};

template <typename T>
CoConvState<T> init_state(const CoConvSpec<T>& spec) {
  CoConvState<T> s;
  s.form = spec.params().form;
  s.prefilled = spec.params().padding;
  return s;
}

namespace detail {

template <typename T>
void conv_tap_into(const CoConvSpec<T>& spec, std::size_t k, std::span<const T> frame,
                   const Shape& frame_shape, Tensor<T>& out) {
  const auto& p = spec.params();
  detail::conv_spatial_accumulate<T>(frame, frame_shape[0], frame_shape[1], frame_shape[2],
                                     spec.tap(k).data(), p.c_out, p.k_h, p.k_w,
                                     p.spatial_padding, out.data());
}

template <typename T>
void add_bias(const CoConvSpec<T>& spec, Tensor<T>& y) {
  const std::size_t plane = y.size() / spec.params().c_out;
  for (std::size_t o = 0; o < spec.params().c_out; ++o) {
    const T b = spec.bias()[o];
    for (std::size_t i = 0; i < plane; ++i) y[o * plane + i] += b;
  }
}

/// Offline clip forward over `x` followed by `end_pad` trailing zero frames.
template <typename T>
Tensor<T> coconv_clip(const CoConvSpec<T>& spec, const Tensor<T>& x, std::size_t end_pad) {
  if (x.rank() != 4) throw DimensionError("conv3d: clip must be [T,C,H,W]");
  const auto& p = spec.params();
  const Shape fs = tail(x.shape());
  const Shape os = spec.out_frame_shape(fs);
  const std::size_t fsize = numel(fs);
  const std::size_t len = x.extent(0);
  const std::size_t total = p.padding + len + end_pad;
  const std::size_t rf = spec.receptive_field();
  const std::size_t n_out = total >= rf ? (total - rf) / p.stride + 1 : 0;
  std::vector<Tensor<T>> out;
  out.reserve(n_out);
  for (std::size_t m = 0; m < n_out; ++m) {
    Tensor<T> y(os);
    const std::size_t j = m * p.stride;
    for (std::size_t k = 0; k < p.k_t; ++k) {
      const std::size_t e = j + k * p.dilation;
      if (e < p.padding || e >= p.padding + len) continue;  // zero frame
      conv_tap_into(spec, k, x.data().subspan((e - p.padding) * fsize, fsize), fs, y);
    }
    add_bias(spec, y);
    out.push_back(std::move(y));
  }
  return stack(out, os);
}

}  // namespace detail

/// Offline clip mode. x is [T x c_in x H x W]; the result has
/// T + padding - receptive_field + 1 frames (ceil-divided by the stride),
/// or none when the clip is shorter than the warm-up.
template <typename T>
Tensor<T> forward(const CoConvSpec<T>& spec, const Tensor<T>& x) {
  return detail::coconv_clip(spec, x, 0);
}

/// Consumes one frame [c_in x H x W]. The k-th ready output equals
/// forward(x)[k] for the same frame sequence.
template <typename T>
StepOutput<T> forward_step(const CoConvSpec<T>& spec, CoConvState<T>& st, const Tensor<T>& x) {
  const auto& p = spec.params();
  if (st.frame_shape.empty()) {
    st.out_shape = spec.out_frame_shape(x.shape());
    st.frame_shape = x.shape();
    if (st.form == CacheForm::kAuto) st.form = cache_elements(spec, x.shape()).chosen;
    if (st.form == CacheForm::kPost) st.fifo.assign(spec.receptive_field() - 1, Tensor<T>(Shape{0}));
  } else if (x.shape() != st.frame_shape) {
    throw DimensionError("conv3d: frame shape " + to_string(x.shape()) + " != stream shape " +
                         to_string(st.frame_shape));
  }

  const std::size_t rf = spec.receptive_field();
  const std::size_t now = st.prefilled + st.steps_seen;  // effective index of x
  const auto emits = [&](std::size_t window_end) {
    return window_end + 1 >= rf && (window_end + 1 - rf) % p.stride == 0;
  };

  StepOutput<T> result;
  if (st.form == CacheForm::kPre) {
    if (emits(now)) {
      Tensor<T> y(st.out_shape);
      for (std::size_t k = 0; k < p.k_t; ++k) {
        const std::size_t lag = rf - 1 - k * p.dilation;
        if (lag > st.steps_seen) continue;  // leading zero frame
        const Tensor<T>& src = lag == 0 ? x : st.fifo[st.fifo.size() - lag];
        detail::conv_tap_into(spec, k, src.data(), st.frame_shape, y);
      }
      detail::add_bias(spec, y);
      result = std::move(y);
    }
    if (rf > 1) {
      st.fifo.push_back(x);
      if (st.fifo.size() > rf - 1) st.fifo.pop_front();
    }
  } else {
    st.fifo.emplace_back(Shape{0});
    for (std::size_t k = 0; k < p.k_t; ++k) {
      const std::size_t back = k * p.dilation;  // window start = now - back
      if (back > now || (now - back) % p.stride != 0) continue;
      Tensor<T>& slot = st.fifo[rf - 1 - back];
      if (slot.empty()) slot = Tensor<T>(st.out_shape);
      detail::conv_tap_into(spec, k, x.data(), st.frame_shape, slot);
    }
    if (emits(now)) {
      Tensor<T> y = std::move(st.fifo.front());
      detail::add_bias(spec, y);
      result = std::move(y);
    }
    st.fifo.pop_front();
  }
  ++st.steps_seen;
  return result;
}

/// Batched iteration of forward_step over x [T x c_in x H x W].
template <typename T>
Tensor<T> forward_steps(const CoConvSpec<T>& spec, CoConvState<T>& st, const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("conv3d: clip must be [T,C,H,W]");
  const Shape fs = tail(x.shape());
  std::vector<Tensor<T>> ready;
  for (std::size_t t = 0; t < x.extent(0); ++t) {
    if (auto y = forward_step(spec, st, frame(x, t))) ready.push_back(std::move(*y));
  }
  return stack(ready, spec.out_frame_shape(fs));
}

/// Module adapter for use inside containers and configs.
template <typename T>
class CoConv final : public Module<T> {
 public:
  explicit CoConv(std::shared_ptr<const CoConvSpec<T>> spec) : spec_(std::move(spec)) {}

  const CoConvSpec<T>& spec() const { return *spec_; }

  std::string kind() const override { return "conv3d"; }
  Shape out_frame_shape(const Shape& in) const override { return spec_->out_frame_shape(in); }
  std::size_t delay() const override { return cin::delay(*spec_); }
  std::size_t receptive_field() const override { return spec_->receptive_field(); }
  std::size_t stride() const override { return spec_->params().stride; }

  Tensor<T> forward(const Tensor<T>& clip) const override { return cin::forward(*spec_, clip); }
  Tensor<T> forward_end_padded(const Tensor<T>& clip) const override {
    return detail::coconv_clip(*spec_, clip, delay());
  }

  std::unique_ptr<State> make_state() const override {
    return std::make_unique<CoConvState<T>>(init_state(*spec_));
  }
  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    return cin::forward_step(*spec_, detail::state_cast<CoConvState<T>>(s), x);
  }

  /// Per emitted frame: outs * c_out * c_in * k_t * k_h * k_w MACs plus one
  /// bias add per output element. Identical for both cache forms.
  StepCost step_cost(const Shape& in) const override {
    const auto& p = spec_->params();
    const Shape os = spec_->out_frame_shape(in);
    const std::uint64_t outs = os[1] * os[2];
    return {Cost{}, Cost{outs * p.c_out * p.c_in * p.k_t * p.k_h * p.k_w, outs * p.c_out}};
  }
  Cost clip_cost(const Shape& in, std::size_t len) const override {
    return step_cost(in).per_emission * this->out_len(len);
  }

 private:
  std::shared_ptr<const CoConvSpec<T>> spec_;
};

}  // namespace cin
