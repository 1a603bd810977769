// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

enum class PoolKind { kAvg, kMax };

struct CoPoolSpec {
  PoolKind kind = PoolKind::kAvg;
  std::size_t window = 1;
  std::size_t padding = 0;  // leading zero frames, avg only
  std::size_t stride = 1;
  // Running-sum refresh period in steps; 0 disables refreshing.
  std::size_t refresh_interval = 4096;

  void validate() const {
    if (window == 0) throw ArgumentError("pool: window must be >= 1");
    if (stride == 0) throw ArgumentError("pool: stride must be >= 1");
    if (padding + 1 > window) throw ArgumentError("pool: padding must be <= window - 1");
    // Zero padding corrupts maxima of negative signals.
    if (kind == PoolKind::kMax && padding != 0) {
      throw ArgumentError("pool: max pooling does not support padding");
    }
  }
};

inline std::size_t delay(const CoPoolSpec& s) { return s.window - 1 - s.padding; }

/// Running sums are kept in double even for float streams.
template <typename T>
using PoolAccum = std::conditional_t<std::is_same_v<T, float>, double, T>;

template <typename T>
struct CoPoolState : State {
  bool started = false;
  Shape frame_shape;
  std::size_t steps_seen = 0;
  std::size_t since_refresh = 0;
  // avg: real frames currently inside the window, oldest first.
  std::deque<Tensor<T>> fifo;
  std::vector<PoolAccum<T>> running_sum;
  // max: per element, (step index, value) candidates with decreasing values.
  std::vector<std::deque<std::pair<std::size_t, T>>> monotone;
};

template <typename T>
CoPoolState<T> init_state(const CoPoolSpec& spec) {
  spec.validate();
  return {};
}

namespace detail {

template <typename T>
void refresh_sum(CoPoolState<T>& st) {
  std::fill(st.running_sum.begin(), st.running_sum.end(), PoolAccum<T>{0});
  for (const auto& f : st.fifo)
    for (std::size_t i = 0; i < f.size(); ++i) st.running_sum[i] += f[i];
  st.since_refresh = 0;
}

}  // namespace detail

/// Consumes one frame of any fixed shape.
///  avg: adds the newest frame to the running sum, emits sum / window once
///       the window (counting leading zeros) is full, then drops the oldest.
///  max: elementwise sliding maximum via monotone deques.
template <typename T>
StepOutput<T> pool_step(const CoPoolSpec& spec, CoPoolState<T>& st, const Tensor<T>& x) {
  if (!st.started) {
    st.started = true;
    st.frame_shape = x.shape();
    if (spec.kind == PoolKind::kAvg) {
      st.running_sum.assign(x.size(), PoolAccum<T>{0});
    } else {
      st.monotone.resize(x.size());
    }
  } else if (x.shape() != st.frame_shape) {
    throw DimensionError("pool: frame shape " + to_string(x.shape()) + " != stream shape " +
                         to_string(st.frame_shape));
  }
  const std::size_t now = spec.padding + st.steps_seen;  // effective index
  const bool full = now + 1 >= spec.window;
  const bool emit = full && (now + 1 - spec.window) % spec.stride == 0;
  StepOutput<T> result;

  if (spec.kind == PoolKind::kAvg) {
    for (std::size_t i = 0; i < x.size(); ++i) st.running_sum[i] += x[i];
    st.fifo.push_back(x);
    if (emit) {
      Tensor<T> y(x.shape());
      const auto w = static_cast<PoolAccum<T>>(spec.window);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(st.running_sum[i] / w);
      result = std::move(y);
    }
    // The frame leaving the window is real only once all leading zeros left.
    if (st.fifo.size() == spec.window) {
      const Tensor<T>& old = st.fifo.front();
      for (std::size_t i = 0; i < old.size(); ++i) st.running_sum[i] -= old[i];
      st.fifo.pop_front();
    }
    if (spec.refresh_interval != 0 && ++st.since_refresh >= spec.refresh_interval) {
      detail::refresh_sum(st);
    }
  } else {
    const std::size_t t = st.steps_seen;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto& dq = st.monotone[i];
      while (!dq.empty() && dq.back().second <= x[i]) dq.pop_back();
      dq.emplace_back(t, x[i]);
      if (dq.front().first + spec.window <= t) dq.pop_front();
    }
    if (emit) {
      Tensor<T> y(x.shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = st.monotone[i].front().second;
      result = std::move(y);
    }
  }
  ++st.steps_seen;
  return result;
}

namespace detail {

template <typename T>
Tensor<T> pool_clip(const CoPoolSpec& spec, const Tensor<T>& x, std::size_t end_pad) {
  spec.validate();
  if (x.rank() == 0) throw DimensionError("pool: clip has no time axis");
  const Shape fs = tail(x.shape());
  const std::size_t fsize = numel(fs);
  const std::size_t len = x.extent(0);
  const std::size_t total = spec.padding + len + end_pad;
  const std::size_t n_out = total >= spec.window ? (total - spec.window) / spec.stride + 1 : 0;
  std::vector<Tensor<T>> out;
  out.reserve(n_out);
  std::vector<PoolAccum<T>> acc(fsize);
  for (std::size_t m = 0; m < n_out; ++m) {
    const std::size_t j = m * spec.stride;
    Tensor<T> y(fs);
    if (spec.kind == PoolKind::kAvg) {
      std::fill(acc.begin(), acc.end(), PoolAccum<T>{0});
      for (std::size_t e = j; e < j + spec.window; ++e) {
        if (e < spec.padding || e >= spec.padding + len) continue;
        const T* src = x.data().data() + (e - spec.padding) * fsize;
        for (std::size_t i = 0; i < fsize; ++i) acc[i] += src[i];
      }
      const auto w = static_cast<PoolAccum<T>>(spec.window);
      for (std::size_t i = 0; i < fsize; ++i) y[i] = static_cast<T>(acc[i] / w);
    } else {
      for (std::size_t i = 0; i < fsize; ++i) {
        T best = x[j * fsize + i];
        for (std::size_t e = j + 1; e < std::min(j + spec.window, len); ++e)
          best = std::max(best, x[e * fsize + i]);
        y[i] = best;
      }
    }
    out.push_back(std::move(y));
  }
  return stack(out, fs);
}

}  // namespace detail

/// Offline windowed pooling over the zero-prefixed clip [T x ...].
template <typename T>
Tensor<T> pool_forward(const CoPoolSpec& spec, const Tensor<T>& x) {
  return detail::pool_clip(spec, x, 0);
}

template <typename T>
class CoPool final : public Module<T> {
 public:
  explicit CoPool(CoPoolSpec spec) : spec_(spec) { spec_.validate(); }

  const CoPoolSpec& spec() const { return spec_; }

  std::string kind() const override {
    return spec_.kind == PoolKind::kAvg ? "avgpool_t" : "maxpool_t";
  }
  Shape out_frame_shape(const Shape& in) const override { return in; }
  std::size_t delay() const override { return cin::delay(spec_); }
  std::size_t receptive_field() const override { return spec_.window; }
  std::size_t stride() const override { return spec_.stride; }

  Tensor<T> forward(const Tensor<T>& clip) const override { return pool_forward(spec_, clip); }
  Tensor<T> forward_end_padded(const Tensor<T>& clip) const override {
    return spec_.kind == PoolKind::kAvg ? detail::pool_clip(spec_, clip, delay()) : forward(clip);
  }

  std::unique_ptr<State> make_state() const override {
    return std::make_unique<CoPoolState<T>>(init_state<T>(spec_));
  }
  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    return pool_step(spec_, detail::state_cast<CoPoolState<T>>(s), x);
  }

  // avg: one add per element per input, subtract and divide per emission.
  // max: amortized one comparison per element per input.
  StepCost step_cost(const Shape& in) const override {
    const std::uint64_t e = numel(in);
    if (spec_.kind == PoolKind::kAvg) return {Cost{0, e}, Cost{0, 2 * e}};
    return {Cost{0, e}, Cost{}};
  }
  // Offline recomputes every window: window-1 adds (or comparisons) per
  // element, plus a division for avg.
  Cost clip_cost(const Shape& in, std::size_t len) const override {
    const std::uint64_t e = numel(in);
    const std::uint64_t per = (spec_.window - 1) * e + (spec_.kind == PoolKind::kAvg ? e : 0);
    return Cost{0, per} * this->out_len(len);
  }

 private:
  CoPoolSpec spec_;
};

}  // namespace cin
