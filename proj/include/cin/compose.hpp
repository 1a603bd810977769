// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "cin/layers.hpp"
#include "cin/module.hpp"

namespace cin {

namespace detail {

inline std::string child_path(const std::string& parent, const std::string& name) {
  return parent.empty() ? name : parent + "/" + name;
}

}  // namespace detail

struct ContainerState : State {
  std::vector<std::unique_ptr<State>> children;
};

/// Chains modules. Delays are accounted at the container's input clock:
/// stage i contributes delay_i times the product of the strides before it,
/// so for strides [2, 3] and delays [1, 2] the composite delay is
/// 1 + 2 * 2 = 5 input steps and the composite stride is 6.
template <typename T>
class Sequential final : public Module<T> {
 public:
  /// `label` replaces "sequential" in reported layer names.
  explicit Sequential(std::vector<ModulePtr<T>> stages, std::string label = "sequential")
      : stages_(std::move(stages)), label_(std::move(label)) {
    if (stages_.empty()) throw ArgumentError("sequential: needs at least one stage");
  }

  const std::vector<ModulePtr<T>>& stages() const { return stages_; }

  std::string kind() const override { return label_; }

  Shape out_frame_shape(const Shape& in) const override {
    Shape s = in;
    for (const auto& m : stages_) s = m->out_frame_shape(s);
    return s;
  }

  std::size_t delay() const override {
    std::size_t d = 0, s = 1;
    for (const auto& m : stages_) {
      d += m->delay() * s;
      s *= m->stride();
    }
    return d;
  }

  std::size_t receptive_field() const override {
    std::size_t rf = 1, s = 1;
    for (const auto& m : stages_) {
      rf += (m->receptive_field() - 1) * s;
      s *= m->stride();
    }
    return rf;
  }

  std::size_t stride() const override {
    std::size_t s = 1;
    for (const auto& m : stages_) s *= m->stride();
    return s;
  }

  Tensor<T> forward(const Tensor<T>& clip) const override {
    Tensor<T> x = clip;
    for (const auto& m : stages_) x = m->forward(x);
    return x;
  }
  Tensor<T> forward_end_padded(const Tensor<T>& clip) const override {
    Tensor<T> x = clip;
    for (const auto& m : stages_) x = m->forward_end_padded(x);
    return x;
  }

  std::unique_ptr<State> make_state() const override {
    auto st = std::make_unique<ContainerState>();
    for (const auto& m : stages_) st->children.push_back(m->make_state());
    return st;
  }

  /// A stage that is not ready ends the step; nothing downstream runs.
  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    auto& st = detail::state_cast<ContainerState>(s);
    StepOutput<T> y = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      y = stages_[i]->forward_step(*st.children[i], *y);
      if (!y) return std::nullopt;
    }
    return y;
  }

  StepCost step_cost(const Shape& in) const override {
    return {Cost{}, total(CountMode::kStepPrediction, in, stride())};
  }
  Cost clip_cost(const Shape& in, std::size_t len) const override {
    return total(CountMode::kOffline, in, len);
  }

  void count(const CountContext& ctx, std::vector<LayerCost>& out) const override {
    CountContext c = ctx;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const auto& m = *stages_[i];
      c.path = detail::child_path(ctx.path, std::to_string(i) + "." + m.kind());
      m.count(c, out);
      c.in_frame = m.out_frame_shape(c.in_frame);
      c.in_len = m.out_len(c.in_len);
      c.inputs_per_prediction /= m.stride();
    }
  }

 private:
  Cost total(CountMode mode, const Shape& in, std::size_t len) const {
    std::vector<LayerCost> parts;
    count(CountContext{mode, in, len, len, ""}, parts);
    Cost c;
    for (const auto& p : parts) c += p.cost;
    return c;
  }

  std::vector<ModulePtr<T>> stages_;
  std::string label_;
};

enum class Reduce { kSum, kConcat };

/// Runs branches on the same input and combines their aligned outputs.
/// Branches may differ in delay; earlier outputs wait in per-branch FIFOs
/// until every branch has produced the output with the same index, so the
/// composite delay is the maximum branch delay.
template <typename T>
class Parallel : public Module<T> {
 public:
  Parallel(std::vector<ModulePtr<T>> branches, Reduce reduce,
           std::vector<std::string> names = {})
      : branches_(std::move(branches)), reduce_(reduce), names_(std::move(names)) {
    if (branches_.empty()) throw ArgumentError("parallel: needs at least one branch");
    for (const auto& b : branches_) {
      if (b->stride() != branches_[0]->stride()) {
        throw ArgumentError("parallel: all branches must have equal stride");
      }
    }
    if (names_.empty()) {
      for (std::size_t i = 0; i < branches_.size(); ++i) names_.push_back("branch" + std::to_string(i));
    }
  }

  const std::vector<ModulePtr<T>>& branches() const { return branches_; }

  std::string kind() const override { return "parallel"; }

  Shape out_frame_shape(const Shape& in) const override {
    Shape out = branches_[0]->out_frame_shape(in);
    for (std::size_t b = 1; b < branches_.size(); ++b) {
      const Shape s = branches_[b]->out_frame_shape(in);
      if (reduce_ == Reduce::kSum) {
        if (s != out) {
          throw DimensionError(kind() + ": branch outputs " + to_string(out) + " and " +
                               to_string(s) + " cannot be summed");
        }
      } else {
        if (s.empty() || out.empty() || Shape(s.begin() + 1, s.end()) != Shape(out.begin() + 1, out.end())) {
          throw DimensionError(kind() + ": branch outputs " + to_string(out) + " and " +
                               to_string(s) + " cannot be concatenated");
        }
        out[0] += s[0];
      }
    }
    return out;
  }

  std::size_t delay() const override {
    std::size_t d = 0;
    for (const auto& b : branches_) d = std::max(d, b->delay());
    return d;
  }

  std::size_t receptive_field() const override {
    // Union of branch windows, measured back from the newest input of an
    // aligned output.
    long long earliest = 0;
    for (const auto& b : branches_) {
      earliest = std::min(earliest, static_cast<long long>(b->delay()) -
                                        static_cast<long long>(b->receptive_field()) + 1);
    }
    return static_cast<std::size_t>(static_cast<long long>(delay()) - earliest + 1);
  }

  std::size_t stride() const override { return branches_[0]->stride(); }

  Tensor<T> forward(const Tensor<T>& clip) const override {
    std::vector<Tensor<T>> outs;
    for (const auto& b : branches_) outs.push_back(b->forward(clip));
    return combine_clips(outs, tail(clip.shape()));
  }
  Tensor<T> forward_end_padded(const Tensor<T>& clip) const override {
    std::vector<Tensor<T>> outs;
    for (const auto& b : branches_) outs.push_back(b->forward_end_padded(clip));
    return combine_clips(outs, tail(clip.shape()));
  }

  struct ParallelState : ContainerState {
    std::vector<std::deque<Tensor<T>>> pending;
  };

  std::unique_ptr<State> make_state() const override {
    auto st = std::make_unique<ParallelState>();
    for (const auto& b : branches_) st->children.push_back(b->make_state());
    st->pending.resize(branches_.size());
    return st;
  }

  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    auto& st = detail::state_cast<ParallelState>(s);
    bool all = true;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      if (auto y = branches_[b]->forward_step(*st.children[b], x)) st.pending[b].push_back(std::move(*y));
      all = all && !st.pending[b].empty();
    }
    if (!all) return std::nullopt;
    std::vector<Tensor<T>> parts;
    for (auto& q : st.pending) {
      parts.push_back(std::move(q.front()));
      q.pop_front();
    }
    return combine(parts);
  }

  StepCost step_cost(const Shape& in) const override {
    std::vector<LayerCost> parts;
    count(CountContext{CountMode::kStepPrediction, in, stride(), stride(), ""}, parts);
    Cost c;
    for (const auto& p : parts) c += p.cost;
    return {Cost{}, c};
  }
  Cost clip_cost(const Shape& in, std::size_t len) const override {
    std::vector<LayerCost> parts;
    count(CountContext{CountMode::kOffline, in, len, len, ""}, parts);
    Cost c;
    for (const auto& p : parts) c += p.cost;
    return c;
  }

  void count(const CountContext& ctx, std::vector<LayerCost>& out) const override {
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      CountContext c = ctx;
      c.path = detail::child_path(ctx.path, names_[b]);
      branches_[b]->count(c, out);
    }
    if (reduce_ == Reduce::kSum && branches_.size() > 1) {
      const std::uint64_t per = (branches_.size() - 1) * numel(out_frame_shape(ctx.in_frame));
      std::uint64_t times = 0;
      switch (ctx.mode) {
        case CountMode::kOffline:
        case CountMode::kStepStream:
          times = this->out_len(ctx.in_len);
          break;
        case CountMode::kStepPrediction:
          times = ctx.inputs_per_prediction / stride();
          break;
      }
      out.push_back({detail::child_path(ctx.path, "sum"), Cost{0, per * times}});
    }
  }

 private:
  Tensor<T> combine(std::vector<Tensor<T>>& parts) const {
    if (reduce_ == Reduce::kConcat) return concat(parts, 0);
    Tensor<T> acc = std::move(parts[0]);
    for (std::size_t b = 1; b < parts.size(); ++b) add_inplace(acc, parts[b]);
    return acc;
  }

  Tensor<T> combine_clips(const std::vector<Tensor<T>>& outs, const Shape& in_frame) const {
    std::size_t n = outs[0].extent(0);
    for (const auto& o : outs) n = std::min(n, o.extent(0));
    std::vector<Tensor<T>> frames;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<Tensor<T>> parts;
      for (const auto& o : outs) parts.push_back(frame(o, k));
      frames.push_back(combine(parts));
    }
    return stack(frames, out_frame_shape(in_frame));
  }

  std::vector<ModulePtr<T>> branches_;
  Reduce reduce_;
  std::vector<std::string> names_;
};

enum class Shortcut { kIdentity, kPointwise };

/// inner(x) + shortcut(x) with the shortcut delayed to match inner's delay.
/// The shortcut's pending outputs form a FIFO of length inner.delay().
template <typename T>
class Residual final : public Parallel<T> {
 public:
  Residual(ModulePtr<T> inner, ModulePtr<T> shortcut)
      : Parallel<T>({check(inner), std::move(shortcut)}, Reduce::kSum, {"inner", "shortcut"}) {}

  /// Identity shortcut.
  explicit Residual(ModulePtr<T> inner)
      : Residual(std::move(inner), std::make_shared<Identity<T>>()) {}

  std::string kind() const override { return "residual"; }
  const Module<T>& inner() const { return *this->branches()[0]; }

 private:
  static ModulePtr<T> check(ModulePtr<T> inner) {
    if (!inner) throw ArgumentError("residual: inner module is null");
    // Composite delay across a strided inner module is not defined.
    if (inner->stride() != 1) throw ArgumentError("residual: inner module must have stride 1");
    return inner;
  }
};

}  // namespace cin
