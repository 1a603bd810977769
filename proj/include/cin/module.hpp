// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cin/cost.hpp"
#include "cin/error.hpp"
#include "cin/tensor.hpp"

namespace cin {

/// Result of consuming one input step: a value once the module is warm and
/// the step completes an output, otherwise `std::nullopt` ("not ready").
template <typename T>
using StepOutput = std::optional<Tensor<T>>;

/// Per-stream mutable state. Each module defines its own subclass; a state
/// belongs to exactly one stream and is never shared.
struct State {
  virtual ~State() = default;
};

namespace detail {

template <typename S>
S& state_cast(State& state) {
  auto* s = dynamic_cast<S*>(&state);
  if (s == nullptr) throw ArgumentError("state object does not belong to this module");
  return *s;
}

}  // namespace detail

/// Number of outputs produced from `len` inputs by a module with the given
/// delay and stride. Outputs land on input steps delay, delay+stride, ...
inline std::size_t emitted_count(std::size_t len, std::size_t delay, std::size_t stride) {
  return len > delay ? (len - 1 - delay) / stride + 1 : 0;
}

enum class CountMode {
  kOffline,         // one forward() over a clip of `in_len` frames
  kStepPrediction,  // step mode, cost per final prediction in steady state
  kStepStream,      // step mode, total over a stream of `in_len` steps
};

struct CountContext {
  CountMode mode = CountMode::kOffline;
  Shape in_frame;
  std::uint64_t in_len = 0;
  // Input steps seen by this module per final prediction (step mode).
  std::uint64_t inputs_per_prediction = 1;
  std::string path;
};

/// Common contract of every continual layer and container. One immutable
/// module object serves clip mode (`forward`) and step mode
/// (`forward_step`/`forward_steps`) with the same weights; the per-stream
/// state lives in objects created by `make_state`.
///
/// Clip layout is [T x frame...]. Output k of `forward` is the k-th ready
/// output of a fresh step-mode stream over the same frames.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;

  virtual std::string kind() const = 0;

  /// Validates `in_frame` and returns the shape of one output frame.
  virtual Shape out_frame_shape(const Shape& in_frame) const = 0;

  virtual std::size_t delay() const = 0;
  virtual std::size_t receptive_field() const = 0;
  virtual std::size_t stride() const { return 1; }

  virtual Tensor<T> forward(const Tensor<T>& clip) const = 0;

  /// Clip mode with temporal end-padding, i.e. the acausal offline variant
  /// a continual network must not use. Exists only as a negative control.
  virtual Tensor<T> forward_end_padded(const Tensor<T>& clip) const { return forward(clip); }

  virtual std::unique_ptr<State> make_state() const = 0;
  virtual StepOutput<T> forward_step(State& state, const Tensor<T>& frame) const = 0;

  Tensor<T> forward_steps(State& state, const Tensor<T>& clip) const {
    if (clip.rank() == 0) throw DimensionError("forward_steps expects a clip with a time axis");
    const Shape in_frame = tail(clip.shape());
    std::vector<Tensor<T>> ready;
    for (std::size_t t = 0; t < clip.extent(0); ++t) {
      if (auto y = forward_step(state, frame(clip, t))) ready.push_back(std::move(*y));
    }
    return stack(ready, out_frame_shape(in_frame));
  }

  std::size_t out_len(std::size_t len) const { return emitted_count(len, delay(), stride()); }

  virtual StepCost step_cost(const Shape& in_frame) const = 0;
  virtual Cost clip_cost(const Shape& in_frame, std::size_t len) const = 0;

  /// Appends per-layer costs. Containers recurse; leaves report themselves.
  virtual void count(const CountContext& ctx, std::vector<LayerCost>& out) const {
    out.push_back({ctx.path.empty() ? kind() : ctx.path, leaf_cost(ctx)});
  }

 protected:
  Cost leaf_cost(const CountContext& ctx) const {
    switch (ctx.mode) {
      case CountMode::kOffline:
        return clip_cost(ctx.in_frame, ctx.in_len);
      case CountMode::kStepPrediction: {
        const StepCost c = step_cost(ctx.in_frame);
        return c.per_input * ctx.inputs_per_prediction +
               c.per_emission * (ctx.inputs_per_prediction / stride());
      }
      case CountMode::kStepStream: {
        const StepCost c = step_cost(ctx.in_frame);
        return c.per_input * ctx.in_len + c.per_emission * out_len(ctx.in_len);
      }
    }
    return {};
  }
};

template <typename T>
using ModulePtr = std::shared_ptr<const Module<T>>;

/// Layer without temporal extent: every step emits, clip mode maps frames.
template <typename T>
class StatelessModule : public Module<T> {
 public:
  std::size_t delay() const override { return 0; }
  std::size_t receptive_field() const override { return 1; }

  virtual Tensor<T> forward_frame(const Tensor<T>& frame) const = 0;
  virtual Cost frame_cost(const Shape& in_frame) const = 0;

  Tensor<T> forward(const Tensor<T>& clip) const override {
    if (clip.rank() == 0) throw DimensionError(this->kind() + ": clip has no time axis");
    const Shape out_frame = this->out_frame_shape(tail(clip.shape()));
    std::vector<Tensor<T>> out;
    out.reserve(clip.extent(0));
    for (std::size_t t = 0; t < clip.extent(0); ++t) out.push_back(forward_frame(frame(clip, t)));
    return stack(out, out_frame);
  }

  std::unique_ptr<State> make_state() const override { return std::make_unique<State>(); }

  StepOutput<T> forward_step(State&, const Tensor<T>& x) const override {
    this->out_frame_shape(x.shape());
    return forward_frame(x);
  }

  StepCost step_cost(const Shape& in_frame) const override {
    return {Cost{}, frame_cost(in_frame)};
  }
  Cost clip_cost(const Shape& in_frame, std::size_t len) const override {
    return frame_cost(in_frame) * len;
  }
};

}  // namespace cin
