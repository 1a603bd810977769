// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

using namespace cin;
using cin::test::all_close;
using cin::test::run_steps;

// softmax(q k^T / sqrt(d)) v, one row at a time.
Tensor<double> sda_oracle(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v) {
  const std::size_t n = q.extent(0), d = q.extent(1), m = k.extent(0), dv = v.extent(1);
  Tensor<double> out({n, dv});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(m);
    double total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      double z = 0;
      for (std::size_t c = 0; c < d; ++c) z += q(i, c) * k(j, c);
      w[j] = std::exp(z / std::sqrt(static_cast<double>(d)));
      total += w[j];
    }
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < dv; ++c) out(i, c) += w[j] / total * v(j, c);
  }
  return out;
}

TEST(Sda, MatchesRowwiseOracle) {
  Xoshiro256 rng(31);
  for (std::size_t n : {1u, 3u, 7u}) {
    const auto q = uniform_tensor<double>(rng, {n, 4});
    const auto k = uniform_tensor<double>(rng, {n, 4});
    const auto v = uniform_tensor<double>(rng, {n, 3});
    EXPECT_TRUE(all_close(sda_full(q, k, v), sda_oracle(q, k, v), 1e-13));
  }
}

TEST(Sda, ConstantValuesPassThrough) {
  Xoshiro256 rng(32);
  const auto q = uniform_tensor<double>(rng, {5, 2});
  const auto k = uniform_tensor<double>(rng, {5, 2});
  EXPECT_TRUE(all_close(sda_full(q, k, Tensor<double>({5, 3}, 2.0)), Tensor<double>({5, 3}, 2.0), 1e-14));
  EXPECT_THROW(sda_full(q, Tensor<double>({5, 3}), k), DimensionError);
}

class RetroAttention : public ::testing::TestWithParam<std::size_t> {};

TEST_P(RetroAttention, MatchesSdaOnEverySlidingWindow) {
  const std::size_t n = GetParam();
  for (std::size_t refresh : {0u, 5u, 64u}) {
    Xoshiro256 rng(40 + n);
    AttnOptions opts;
    opts.refresh_interval = refresh;
    RetroCache<double> cache(n, 3, 2, opts);
    const std::size_t len = 128;
    const auto q = uniform_tensor<double>(rng, {len, 3});
    const auto k = uniform_tensor<double>(rng, {len, 3});
    const auto v = uniform_tensor<double>(rng, {len, 2});
    for (std::size_t t = 0; t < len; ++t) {
      auto y = retro_att_step(cache, frame(q, t), frame(k, t), frame(v, t));
      ASSERT_EQ(y.has_value(), t + 1 >= n) << "t " << t;
      if (!y) continue;
      const std::size_t b = t + 1 - n;
      const auto ref = sda_oracle(slice(q, 0, b, t + 1), slice(k, 0, b, t + 1), slice(v, 0, b, t + 1));
      ASSERT_TRUE(all_close(*y, ref, 1e-9)) << "n " << n << " t " << t << " refresh " << refresh;
    }
    EXPECT_LE(cache.k_mem.size(), n);
    EXPECT_LE(cache.q_mem.size(), n - 1);
  }
}

TEST_P(RetroAttention, SingleOutputMatchesNewestRow) {
  const std::size_t n = GetParam();
  Xoshiro256 rng(50 + n);
  SingleCache<double> cache(n, 4);
  const std::size_t len = 128;
  const auto q = uniform_tensor<double>(rng, {len, 4});
  const auto k = uniform_tensor<double>(rng, {len, 4});
  const auto v = uniform_tensor<double>(rng, {len, 4});
  for (std::size_t t = 0; t < len; ++t) {
    auto y = single_att_step(cache, frame(q, t), frame(k, t), frame(v, t));
    ASSERT_EQ(y.has_value(), t + 1 >= n);
    if (!y) continue;
    const std::size_t b = t + 1 - n;
    const auto ref = sda_oracle(slice(q, 0, t, t + 1), slice(k, 0, b, t + 1), slice(v, 0, b, t + 1));
    ASSERT_TRUE(all_close(y->reshaped({1, 4}), ref, 1e-12)) << "t " << t;
    EXPECT_LE(cache.k_mem.size(), n - 1);
  }
}

INSTANTIATE_TEST_SUITE_P(Windows, RetroAttention, ::testing::Values(1u, 2u, 4u, 8u, 64u));

TEST(RetroAttentionControl, UnscaledUpdatesDiverge) {
  Xoshiro256 rng(60);
  AttnOptions opts;
  opts.refresh_interval = 0;
  opts.scale_updates = false;
  RetroCache<double> cache(4, 8, 8, opts);
  double worst = 0;
  std::vector<Tensor<double>> qs, ks, vs;
  for (std::size_t t = 0; t < 32; ++t) {
    const auto q = uniform_tensor<double>(rng, {1, 8}, -2, 2);
    const auto k = uniform_tensor<double>(rng, {1, 8}, -2, 2);
    const auto v = uniform_tensor<double>(rng, {1, 8});
    qs.push_back(q);
    ks.push_back(k);
    vs.push_back(v);
    auto y = retro_att_step(cache, q.reshaped({8}), k.reshaped({8}), v.reshaped({8}));
    if (!y) continue;
    std::vector<Tensor<double>> wq(qs.end() - 4, qs.end()), wk(ks.end() - 4, ks.end()), wv(vs.end() - 4, vs.end());
    const auto ref = sda_oracle(concat(wq, 0), concat(wk, 0), concat(wv, 0));
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs((*y)[i] - ref[i]));
  }
  EXPECT_GT(worst, 1e-3);
}

TEST(RetroAttentionControl, LogitClampKeepsOutputFinite) {
  AttnOptions opts;
  opts.logit_clamp = 30;
  SingleCache<double> cache(2, 1, 1, opts);
  single_att_step(cache, Tensor<double>({1}, 1e3), Tensor<double>({1}, 1e3), Tensor<double>({1}, 1.0));
  auto y = single_att_step(cache, Tensor<double>({1}, 1e3), Tensor<double>({1}, 1e3), Tensor<double>({1}, 3.0));
  ASSERT_TRUE(y.has_value());
  EXPECT_TRUE(std::isfinite((*y)[0]));
  EXPECT_GT(cache.clamped_logits, 0u);
}

AttnSpec<double> random_attn(Xoshiro256& rng, std::size_t n, std::size_t d, std::size_t heads) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {n, d, heads, uniform_tensor<double>(rng, {d, d}, -s, s), uniform_tensor<double>(rng, {d, d}, -s, s),
          uniform_tensor<double>(rng, {d, d}, -s, s), uniform_tensor<double>(rng, {d, d}, -s, s)};
}

TEST(MultiHead, MatchesPerHeadOracle) {
  Xoshiro256 rng(70);
  const auto spec = random_attn(rng, 5, 6, 3);
  const auto x = uniform_tensor<double>(rng, {5, 6});
  const auto q = matmul(x, spec.w_q), k = matmul(x, spec.w_k), v = matmul(x, spec.w_v);
  std::vector<Tensor<double>> heads;
  for (std::size_t h = 0; h < 3; ++h) {
    heads.push_back(sda_oracle(slice(q, 1, 2 * h, 2 * h + 2), slice(k, 1, 2 * h, 2 * h + 2),
                               slice(v, 1, 2 * h, 2 * h + 2)));
  }
  const auto ref = matmul(concat(heads, 1), spec.w_o);
  EXPECT_TRUE(all_close(mha_full(spec, x, x, x), ref, 1e-12));
}

TEST(MultiHead, ContinualStepsMatchWindows) {
  Xoshiro256 rng(71);
  auto spec = random_attn(rng, 4, 8, 2);
  spec.options.refresh_interval = 7;
  const auto x = uniform_tensor<double>(rng, {40, 8});
  auto retro = make_mha_cache(spec, AttnMode::kRetro);
  auto single = make_mha_cache(spec, AttnMode::kSingle);
  for (std::size_t t = 0; t < 40; ++t) {
    const auto row = frame(x, t);
    const auto yr = comha_step(spec, retro, row, row, row);
    const auto ys = comha_step(spec, single, row, row, row);
    ASSERT_EQ(yr.has_value(), t >= 3);
    ASSERT_EQ(ys.has_value(), t >= 3);
    if (!yr) continue;
    const auto w = slice(x, 0, t - 3, t + 1);
    const auto ref = mha_full(spec, w, w, w);
    EXPECT_TRUE(all_close(*yr, ref, 1e-10)) << "t " << t;
    EXPECT_TRUE(all_close(*ys, frame(ref, 3), 1e-10)) << "t " << t;
  }
  EXPECT_EQ(retro.clamped_logits(), 0u);
}

TEST(MultiHead, RejectsIndivisibleHeads) {
  Xoshiro256 rng(72);
  EXPECT_THROW(make_mha_cache(random_attn(rng, 4, 6, 4), AttnMode::kSingle), ArgumentError);
}

TEST(RecyclingPositions, StepMatchesModularOffline) {
  Xoshiro256 rng(80);
  auto enc = std::make_shared<const Tensor<double>>(uniform_tensor<double>(rng, {3, 2}));
  auto st = make_rpe_state(enc);
  const auto x = uniform_tensor<double>(rng, {10, 2});
  const auto offline = rpe_apply(*enc, x);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(rpe_step(st, frame(x, t)), frame(offline, t));
    EXPECT_EQ(st.tau, (t + 1) % 3);
  }
  EXPECT_THROW(make_rpe_state<double>(nullptr), DimensionError);
}

std::shared_ptr<EncoderBlockSpec<double>> random_block(Xoshiro256& rng, std::size_t n, std::size_t d,
                                                       std::size_t heads, std::size_t ff, AttnMode mode,
                                                       std::size_t rpe_period) {
  auto b = std::make_shared<EncoderBlockSpec<double>>();
  b->attn = random_attn(rng, n, d, heads);
  b->ln1 = {uniform_tensor<double>(rng, {d}, 0.5, 1.5), uniform_tensor<double>(rng, {d}, -0.1, 0.1)};
  b->ln2 = {uniform_tensor<double>(rng, {d}, 0.5, 1.5), uniform_tensor<double>(rng, {d}, -0.1, 0.1)};
  b->w1 = uniform_tensor<double>(rng, {d, ff}, -0.5, 0.5);
  b->b1 = uniform_tensor<double>(rng, {ff}, -0.1, 0.1);
  b->w2 = uniform_tensor<double>(rng, {ff, d}, -0.5, 0.5);
  b->b2 = uniform_tensor<double>(rng, {d}, -0.1, 0.1);
  b->mode = mode;
  if (rpe_period > 0) b->rpe = std::make_shared<const Tensor<double>>(uniform_tensor<double>(rng, {rpe_period, d}, -0.1, 0.1));
  return b;
}

TEST(EncoderBlock, StepMatchesOfflineInBothModes) {
  Xoshiro256 rng(90);
  for (AttnMode mode : {AttnMode::kRetro, AttnMode::kSingle}) {
    for (std::size_t n : {1u, 4u, 16u}) {
      const CoEncoderBlock<double> block(random_block(rng, n, 8, 2, 16, mode, n));
      const auto x = uniform_tensor<double>(rng, {n + 40, 8});
      const auto steps = run_steps(block, x);
      const auto clip = block.forward(x);
      EXPECT_EQ(steps.extent(0), 41u);
      EXPECT_TRUE(all_close(steps, clip, 1e-9)) << to_string(mode) << " n " << n;
      EXPECT_EQ(block.delay(), n - 1);
    }
  }
}

TEST(EncoderBlock, OfflineSingleIsLastRowOfRetro) {
  Xoshiro256 rng(91);
  auto spec = random_block(rng, 5, 4, 1, 8, AttnMode::kRetro, 0);
  const auto w = uniform_tensor<double>(rng, {5, 4});
  EXPECT_TRUE(all_close(encoder_block_last(*spec, w), frame(encoder_block_window(*spec, w), 4), 1e-12));
}

TEST(EncoderBlock, WindowBlockOverRetroOutput) {
  Xoshiro256 rng(92);
  const CoEncoderBlock<double> first(random_block(rng, 6, 4, 2, 8, AttnMode::kRetro, 6));
  const WindowEncoderBlock<double> second(random_block(rng, 6, 4, 2, 8, AttnMode::kSingle, 0));
  const Sequential<double> net({std::make_shared<CoEncoderBlock<double>>(first),
                                std::make_shared<WindowEncoderBlock<double>>(second)});
  const auto x = uniform_tensor<double>(rng, {30, 4});
  EXPECT_TRUE(all_close(run_steps(net, x), net.forward(x), 1e-9));
  EXPECT_EQ(net.out_frame_shape({4}), (Shape{4}));
  EXPECT_THROW(WindowEncoderBlock<double>(random_block(rng, 6, 4, 2, 8, AttnMode::kSingle, 3)), ArgumentError);
}

TEST(EncoderBlock, ValidatesWeights) {
  Xoshiro256 rng(93);
  auto spec = random_block(rng, 4, 4, 1, 8, AttnMode::kSingle, 0);
  spec->b1 = Tensor<double>({7});
  EXPECT_THROW(CoEncoderBlock<double>{spec}, DimensionError);
}

TEST(AttentionCost, SingleStepLinearOfflineQuadratic) {
  // Attention core only, realistic head width.
  const std::size_t dh = 64;
  for (std::size_t n : {64u, 128u, 256u}) {
    const Cost offline = detail::sda_cost(2 * n, dh);
    const Cost base = detail::sda_cost(n, dh);
    EXPECT_NEAR(static_cast<double>(offline.flops()) / base.flops(), 4.0, 0.1);
  }
  Xoshiro256 rng(94);
  const CoEncoderBlock<double> small(random_block(rng, 64, 2, 1, 2, AttnMode::kSingle, 0));
  const CoEncoderBlock<double> big(random_block(rng, 128, 2, 1, 2, AttnMode::kSingle, 0));
  const auto step = [](const CoEncoderBlock<double>& b) {
    const auto c = b.step_cost({2});
    return static_cast<double>((c.per_input + c.per_emission).flops());
  };
  const auto window = [](const CoEncoderBlock<double>& b, std::size_t n) {
    return static_cast<double>(b.clip_cost({2}, n).flops());
  };
  EXPECT_LE(step(big) / step(small), 2.1);
  EXPECT_GE(window(big, 128) / window(small, 64), 3.5);
}

}  // namespace
