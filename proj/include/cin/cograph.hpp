// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "cin/coconv.hpp"
#include "cin/conorm.hpp"
#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

using Edge = std::pair<std::size_t, std::size_t>;

/// The 25-joint NTU RGB+D skeleton, 0-based joint indices.
inline std::vector<Edge> ntu_rgbd_edges() {
  static const std::size_t one_based[][2] = {
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
      {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
      {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  std::vector<Edge> edges;
  for (const auto& e : one_based) edges.emplace_back(e[0] - 1, e[1] - 1);
  return edges;
}
inline constexpr std::size_t kNtuCenter = 20;  // spine joint

/// Path graph 0 - 1 - ... - (v-1).
inline std::vector<Edge> chain_edges(std::size_t v) {
  std::vector<Edge> edges;
  for (std::size_t i = 1; i < v; ++i) edges.emplace_back(i - 1, i);
  return edges;
}

/// Fixed skeleton graph with one or more v x v adjacency partitions.
template <typename T>
class SkeletonGraph {
 public:
  SkeletonGraph(std::size_t v, std::vector<Tensor<T>> partitions)
      : v_(v), partitions_(std::move(partitions)) {
    if (v_ == 0) throw ArgumentError("graph: node count must be >= 1");
    if (partitions_.empty()) throw ArgumentError("graph: at least one partition is required");
    for (const auto& a : partitions_) {
      if (a.shape() != Shape{v_, v_}) {
        throw DimensionError("graph: partition " + to_string(a.shape()) + " is not " +
                             std::to_string(v_) + "x" + std::to_string(v_));
      }
    }
  }

  static SkeletonGraph identity(std::size_t v) {
    Tensor<T> a({v, v});
    for (std::size_t i = 0; i < v; ++i) a[i * v + i] = T{1};
    return SkeletonGraph(v, {std::move(a)});
  }

  /// Symmetric normalization D^-1/2 (A + I) D^-1/2 of an undirected edge
  /// list. With 3 partitions the normalized matrix is split by hop distance
  /// to `center`: same distance (including self loops), towards the center
  /// and away from it.
  static SkeletonGraph from_edges(std::size_t v, const std::vector<Edge>& edges,
                                  std::size_t partitions, std::size_t center = 0) {
    if (partitions != 1 && partitions != 3) throw ArgumentError("graph: partitions must be 1 or 3");
    if (v == 0) throw ArgumentError("graph: node count must be >= 1");
    if (center >= v) throw ArgumentError("graph: center node out of range");
    std::vector<double> a(v * v, 0.0);
    for (std::size_t i = 0; i < v; ++i) a[i * v + i] = 1.0;
    for (const auto& [i, j] : edges) {
      if (i >= v || j >= v) throw ArgumentError("graph: edge references node outside [0, v)");
      a[i * v + j] = a[j * v + i] = 1.0;
    }
    std::vector<double> deg(v, 0.0);
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j) deg[i] += a[i * v + j];
    std::vector<double> norm(v * v);
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j)
        norm[i * v + j] = a[i * v + j] / std::sqrt(deg[i] * deg[j]);

    if (partitions == 1) {
      Tensor<T> p({v, v});
      for (std::size_t i = 0; i < v * v; ++i) p[i] = static_cast<T>(norm[i]);
      return SkeletonGraph(v, {std::move(p)});
    }
    const std::size_t inf = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> hop(v, inf);
    std::queue<std::size_t> frontier;
    hop[center] = 0;
    frontier.push(center);
    while (!frontier.empty()) {
      const std::size_t i = frontier.front();
      frontier.pop();
      for (std::size_t j = 0; j < v; ++j) {
        if (a[i * v + j] != 0.0 && hop[j] == inf) {
          hop[j] = hop[i] + 1;
          frontier.push(j);
        }
      }
    }
    std::vector<Tensor<T>> parts(3, Tensor<T>({v, v}));
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t j = 0; j < v; ++j) {
        if (norm[i * v + j] == 0.0) continue;
        const std::size_t p = hop[j] == hop[i] ? 0 : (hop[j] < hop[i] ? 1 : 2);
        parts[p][i * v + j] = static_cast<T>(norm[i * v + j]);
      }
    }
    return SkeletonGraph(v, std::move(parts));
  }

  std::size_t v() const { return v_; }
  std::size_t num_partitions() const { return partitions_.size(); }
  const Tensor<T>& partition(std::size_t p) const { return partitions_.at(p); }
  const std::vector<Tensor<T>>& partitions() const { return partitions_; }

 private:
  std::size_t v_;
  std::vector<Tensor<T>> partitions_;
};

/// Spatial graph convolution of one frame x [c_in x v]:
/// sum over partitions p of W_p^T x A_p, with W_p [c_in x c_out].
template <typename T>
Tensor<T> gc(const Tensor<T>& x, const SkeletonGraph<T>& graph, const std::vector<Tensor<T>>& w_gc) {
  if (w_gc.size() != graph.num_partitions()) {
    throw DimensionError("gc: " + std::to_string(w_gc.size()) + " projections for " +
                         std::to_string(graph.num_partitions()) + " partitions");
  }
  if (x.rank() != 2 || x.extent(1) != graph.v()) {
    throw DimensionError("gc: expected frame [c_in x " + std::to_string(graph.v()) + "], got " +
                         to_string(x.shape()));
  }
  Tensor<T> out;
  for (std::size_t p = 0; p < w_gc.size(); ++p) {
    if (w_gc[p].rank() != 2 || w_gc[p].extent(0) != x.extent(0)) {
      throw DimensionError("gc: projection " + to_string(w_gc[p].shape()) + " does not match " +
                           std::to_string(x.extent(0)) + " input channels");
    }
    Tensor<T> y = matmul(matmul(transpose(w_gc[p]), x), graph.partition(p));
    if (p == 0) {
      out = std::move(y);
    } else {
      add_inplace(out, y);
    }
  }
  return out;
}

inline Cost gc_cost(std::size_t c_in, std::size_t c_out, std::size_t v, std::size_t partitions) {
  return {partitions * (c_out * c_in * v + c_out * v * v), (partitions - 1) * c_out * v};
}

enum class ResidualKind { kNone, kIdentity, kPointwise };

inline const char* to_string(ResidualKind r) {
  switch (r) {
    case ResidualKind::kNone: return "none";
    case ResidualKind::kIdentity: return "identity";
    case ResidualKind::kPointwise: return "pointwise";
  }
  return "?";
}

/// One ST-GCN block: ReLU(BN(TC(GC(x))) + Res(x)), frames [c x v].
/// The temporal convolution runs on [c_out x v x 1] frames with k_h = k_w = 1.
template <typename T>
class StGcnBlockSpec {
 public:
  StGcnBlockSpec(SkeletonGraph<T> graph, std::vector<Tensor<T>> w_gc, CoConvSpec<T> tc,
                 BatchNormSpec<T> bn, ResidualKind res, Tensor<T> w_res, std::size_t res_delay)
      : graph_(std::move(graph)), w_gc_(std::move(w_gc)), tc_(std::move(tc)), bn_(std::move(bn)),
        res_(res), w_res_(std::move(w_res)), res_delay_(res_delay) {
    if (w_gc_.size() != graph_.num_partitions() || w_gc_.empty()) {
      throw DimensionError("stgcn block: one channel projection per partition is required");
    }
    c_in_ = w_gc_[0].rank() == 2 ? w_gc_[0].extent(0) : 0;
    c_out_ = w_gc_[0].rank() == 2 ? w_gc_[0].extent(1) : 0;
    for (const auto& w : w_gc_) {
      if (w.shape() != Shape{c_in_, c_out_} || c_in_ == 0 || c_out_ == 0) {
        throw DimensionError("stgcn block: projections must all be [c_in x c_out]");
      }
    }
    const auto& tp = tc_.params();
    if (tp.c_in != c_out_ || tp.c_out != c_out_ || tp.k_h != 1 || tp.k_w != 1 ||
        tp.spatial_padding.h != 0 || tp.spatial_padding.w != 0) {
      throw DimensionError("stgcn block: temporal convolution must map c_out to c_out with 1x1 spatial kernel");
    }
    bn_.validate();
    if (bn_.channels() != c_out_) throw DimensionError("stgcn block: batchnorm must have c_out channels");
    if (res_ == ResidualKind::kIdentity && c_in_ != c_out_) {
      throw DimensionError("stgcn block: identity residual needs c_in == c_out");
    }
    if (res_ == ResidualKind::kPointwise && w_res_.shape() != Shape{c_in_, c_out_}) {
      throw DimensionError("stgcn block: residual projection must be [c_in x c_out]");
    }
    if (res_delay_ != cin::delay(tc_)) {
      throw ArgumentError("stgcn block: residual delay " + std::to_string(res_delay_) +
                          " must equal the temporal convolution delay " +
                          std::to_string(cin::delay(tc_)));
    }
  }

  const SkeletonGraph<T>& graph() const { return graph_; }
  const std::vector<Tensor<T>>& w_gc() const { return w_gc_; }
  const CoConvSpec<T>& tc() const { return tc_; }
  const BatchNormSpec<T>& bn() const { return bn_; }
  ResidualKind res() const { return res_; }
  const Tensor<T>& w_res() const { return w_res_; }
  std::size_t res_delay() const { return res_delay_; }
  std::size_t c_in() const { return c_in_; }
  std::size_t c_out() const { return c_out_; }
  std::size_t v() const { return graph_.v(); }

  /// Residual branch on one input frame [c_in x v].
  Tensor<T> residual(const Tensor<T>& x) const {
    switch (res_) {
      case ResidualKind::kNone: return Tensor<T>({c_out_, v()});
      case ResidualKind::kIdentity: return x;
      case ResidualKind::kPointwise: return matmul(transpose(w_res_), x);
    }
    return {};
  }

  /// BN, residual add and ReLU on a completed temporal output.
  Tensor<T> finish(const Tensor<T>& tc_out, const Tensor<T>& x_aligned) const {
    Tensor<T> y = bn_apply(bn_, tc_out.reshaped({c_out_, v()}), 0);
    if (res_ != ResidualKind::kNone) add_inplace(y, residual(x_aligned));
    return relu(y);
  }

 private:
  SkeletonGraph<T> graph_;
  std::vector<Tensor<T>> w_gc_;
  CoConvSpec<T> tc_;
  BatchNormSpec<T> bn_;
  ResidualKind res_;
  Tensor<T> w_res_;
  std::size_t res_delay_;
  std::size_t c_in_ = 0, c_out_ = 0;
};

/// Offline block over a clip [T x c_in x v]. Output m adds the residual of
/// input frame m * stride, the frame its temporal window is aligned with.
template <typename T>
Tensor<T> block_forward(const StGcnBlockSpec<T>& spec, const Tensor<T>& clip, std::size_t end_pad = 0) {
  if (clip.rank() != 3) throw DimensionError("stgcn block: clip must be [T x c x v]");
  const std::size_t len = clip.extent(0), v = spec.v();
  std::vector<Tensor<T>> g;
  for (std::size_t t = 0; t < len; ++t) {
    g.push_back(gc(frame(clip, t), spec.graph(), spec.w_gc()).reshaped({spec.c_out(), v, 1}));
  }
  const Tensor<T> tc_out = detail::coconv_clip(spec.tc(), stack(g, Shape{spec.c_out(), v, 1}), end_pad);
  std::vector<Tensor<T>> out;
  const std::size_t stride = spec.tc().params().stride;
  for (std::size_t m = 0; m < tc_out.extent(0); ++m) {
    const std::size_t src = m * stride;
    // Aligned frames past the clip end only occur with end padding.
    const Tensor<T> x = src < len ? frame(clip, src) : Tensor<T>({spec.c_in(), v});
    out.push_back(spec.finish(frame(tc_out, m), x));
  }
  return stack(out, Shape{spec.c_out(), v});
}

template <typename T>
struct StGcnBlockState : State {
  CoConvState<T> tc;
  // Raw input frames awaiting their aligned output, oldest first.
  std::deque<Tensor<T>> x_fifo;
};

template <typename T>
StGcnBlockState<T> init_state(const StGcnBlockSpec<T>& spec) {
  StGcnBlockState<T> st;
  st.tc = init_state(spec.tc());
  return st;
}

/// Consumes one skeleton frame [c_in x v].
template <typename T>
StepOutput<T> block_step(const StGcnBlockSpec<T>& spec, StGcnBlockState<T>& st, const Tensor<T>& x) {
  const Tensor<T> g = gc(x, spec.graph(), spec.w_gc());
  if (spec.res() != ResidualKind::kNone) {
    st.x_fifo.push_back(x);
    if (st.x_fifo.size() > spec.res_delay() + 1) st.x_fifo.pop_front();
  }
  StepOutput<T> y = forward_step(spec.tc(), st.tc, g.reshaped({spec.c_out(), spec.v(), 1}));
  if (!y) return std::nullopt;
  return spec.finish(*y, spec.res() == ResidualKind::kNone ? x : st.x_fifo.front());
}

template <typename T>
class StGcnBlock final : public Module<T> {
 public:
  explicit StGcnBlock(std::shared_ptr<const StGcnBlockSpec<T>> spec) : spec_(std::move(spec)) {}
  const StGcnBlockSpec<T>& spec() const { return *spec_; }

  std::string kind() const override { return "stgcn_block"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in != Shape{spec_->c_in(), spec_->v()}) {
      throw DimensionError("stgcn_block: expected frame [" + std::to_string(spec_->c_in()) + "," +
                           std::to_string(spec_->v()) + "], got " + to_string(in));
    }
    return {spec_->c_out(), spec_->v()};
  }
  std::size_t delay() const override { return cin::delay(spec_->tc()); }
  std::size_t receptive_field() const override { return spec_->tc().receptive_field(); }
  std::size_t stride() const override { return spec_->tc().params().stride; }

  Tensor<T> forward(const Tensor<T>& clip) const override { return block_forward(*spec_, clip); }
  Tensor<T> forward_end_padded(const Tensor<T>& clip) const override {
    return block_forward(*spec_, clip, delay());
  }
  std::unique_ptr<State> make_state() const override {
    return std::make_unique<StGcnBlockState<T>>(init_state(*spec_));
  }
  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    return block_step(*spec_, detail::state_cast<StGcnBlockState<T>>(s), x);
  }

  /// GC runs on every input frame; TC, BN, residual and ReLU only on
  /// emitted frames.
  StepCost step_cost(const Shape& in) const override {
    out_frame_shape(in);
    const std::size_t ci = spec_->c_in(), co = spec_->c_out(), v = spec_->v();
    const std::size_t e = co * v;
    Cost emission{co * co * spec_->tc().params().k_t * v, e};  // TC + bias
    emission += bn_cost(e);
    if (spec_->res() == ResidualKind::kPointwise) emission += Cost{co * ci * v, 0};
    if (spec_->res() != ResidualKind::kNone) emission += Cost{0, e};
    emission += Cost{0, e};  // ReLU
    return {gc_cost(ci, co, v, spec_->graph().num_partitions()), emission};
  }
  Cost clip_cost(const Shape& in, std::size_t len) const override {
    const StepCost c = step_cost(in);
    return c.per_input * len + c.per_emission * this->out_len(len);
  }

 private:
  std::shared_ptr<const StGcnBlockSpec<T>> spec_;
};

}  // namespace cin
