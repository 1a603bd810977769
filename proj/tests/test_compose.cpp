// SPDX-License-Identifier: Apache-2.0
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trees.hpp"

namespace {

using namespace cin;
using cin::test::all_close;
using cin::test::run_steps;

// Delay-only stand-in: passes frames through after `delay` steps, emitting
// every `stride`-th one.
ModulePtr<double> shifter(std::size_t delay, std::size_t stride) {
  CoConvParams p;
  p.k_t = delay + 1;
  p.stride = stride;
  Tensor<double> w({1, 1, delay + 1, 1, 1});
  w(0, 0, 0, 0, 0) = 1;  // oldest tap: output m is input m * stride
  return std::make_shared<CoConv<double>>(std::make_shared<CoConvSpec<double>>(p, w, Tensor<double>({1})));
}

Tensor<double> ramp(std::size_t len) {
  Tensor<double> x({len, 1, 1, 1});
  for (std::size_t t = 0; t < len; ++t) x[t] = static_cast<double>(t);
  return x;
}

TEST(Sequential, DelayAndStrideAlgebra) {
  const Sequential<double> seq({shifter(1, 2), shifter(2, 3)});
  EXPECT_EQ(seq.delay(), 5u);
  EXPECT_EQ(seq.stride(), 6u);
  EXPECT_EQ(seq.receptive_field(), 2u + 2 * 2);
  const auto sched = cin::test::observe(seq, ramp(40));
  EXPECT_TRUE(cin::test::schedule_matches(seq, sched, 40));
  EXPECT_EQ(sched.steps.front(), 5u);
}

TEST(Sequential, OutputsAlignWithInputIndices) {
  const Sequential<double> seq({shifter(1, 2), shifter(2, 3)});
  const auto y = run_steps(seq, ramp(40));
  // Output k starts at input k * 6.
  for (std::size_t k = 0; k < y.extent(0); ++k) EXPECT_EQ(y[k], static_cast<double>(6 * k));
  EXPECT_EQ(y, seq.forward(ramp(40)));
}

TEST(Parallel, BalancesBranchDelays) {
  const Parallel<double> par({shifter(0, 1), shifter(3, 1)}, Reduce::kSum);
  EXPECT_EQ(par.delay(), 3u);
  EXPECT_EQ(par.receptive_field(), 4u);
  const auto y = run_steps(par, ramp(10));
  ASSERT_EQ(y.extent(0), 7u);
  // Branch 0 emits x[k] at step k, branch 1 emits x[k] at step k + 3.
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(y[k], 2.0 * static_cast<double>(k));
  EXPECT_EQ(y, par.forward(ramp(10)));
}

TEST(Parallel, ConcatStacksChannels) {
  const Parallel<double> par({shifter(0, 1), shifter(1, 1)}, Reduce::kConcat);
  EXPECT_EQ(par.out_frame_shape({1, 1, 1}), (Shape{2, 1, 1}));
  const auto y = run_steps(par, ramp(5));
  EXPECT_EQ(y.shape(), (Shape{4, 2, 1, 1}));
  EXPECT_EQ(y(3, 1, 0, 0), 3.0);
}

TEST(Parallel, RejectsMixedStrides) {
  EXPECT_THROW(Parallel<double>({shifter(0, 1), shifter(0, 2)}, Reduce::kSum), ArgumentError);
}

TEST(Residual, DelaysShortcutToMatchInner) {
  const Residual<double> res(shifter(2, 1));
  const auto y = run_steps(res, ramp(8));
  ASSERT_EQ(y.extent(0), 6u);
  // inner output k is x[k]; the shortcut adds x[k] as well.
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(y[k], 2.0 * static_cast<double>(k));
  EXPECT_THROW(Residual<double>(shifter(0, 2)), ArgumentError);
}

TEST(Residual, PointwiseShortcut) {
  Xoshiro256 rng(3);
  auto proj = std::make_shared<Linear<double>>(uniform_tensor<double>(rng, {2, 2}), Tensor<double>());
  CoConvParams p{2, 2, 3, 1, 1, 1, 0, 1, {}, CacheForm::kAuto};
  auto inner = std::make_shared<CoConv<double>>(cin::test::random_conv<double>(rng, p));
  const Residual<double> res(inner, proj);
  const auto x = uniform_tensor<double>(rng, {9, 2, 2, 2});
  const auto y = run_steps(res, x);
  const auto ref = add(inner->forward(x), slice(proj->forward(x), 0, 0, 7));
  EXPECT_TRUE(all_close(y, ref, 1e-12));
}

TEST(PropertyTrees, ScheduleChunkingAndEquivalence) {
  cin::test::TreeGenerator<double> gen(2024);
  for (int i = 0; i < 40; ++i) {
    const auto tree = gen.tree();
    const std::size_t len = 3 * tree->receptive_field() + 5;
    const auto x = uniform_tensor<double>(gen.rng(), {len, cin::test::kTreeChannels, 3, 3});
    const auto sched = cin::test::observe(*tree, x);
    EXPECT_TRUE(cin::test::schedule_matches(*tree, sched, len)) << "tree " << i;
    const auto whole = run_steps(*tree, x);
    const auto chunked = cin::test::run_chunked(*tree, x, {1, len / 3, len / 2 + 1});
    EXPECT_EQ(chunked, whole) << "tree " << i;
    EXPECT_TRUE(all_close(whole, tree->forward(x), 1e-10)) << "tree " << i;
  }
}

TEST(Counting, PerLayerEntriesSumToTotal) {
  const Sequential<double> seq({shifter(1, 1), std::make_shared<ReLU<double>>(), shifter(2, 1)});
  std::vector<LayerCost> parts;
  seq.count({CountMode::kOffline, {1, 1, 1}, 10, 10, ""}, parts);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].name, "0.conv3d");
  EXPECT_EQ(parts[1].name, "1.relu");
  Cost total;
  for (const auto& p : parts) total += p.cost;
  EXPECT_EQ(total, seq.clip_cost({1, 1, 1}, 10));
  // conv 9 outputs * 2 MACs, relu on 9 frames, conv 7 outputs * 3 MACs.
  EXPECT_EQ(total.macs, 9u * 2 + 7 * 3);
}

}  // namespace
