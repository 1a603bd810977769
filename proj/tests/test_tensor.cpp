// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <vector>

#include <gtest/gtest.h>

#include "cin/random.hpp"
#include "cin/tensor.hpp"

namespace {

using cin::Shape;
using cin::Tensor;

// Oracles are written as plain loops over flat indices.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, std::size_t ph, std::size_t pw) {
  const std::size_t ci = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t ho = h + 2 * ph - kh + 1, wo = wd + 2 * pw - kw + 1;
  Tensor<T> out({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        T acc = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i + a) - static_cast<long>(ph);
              const long s = static_cast<long>(j + b) - static_cast<long>(pw);
              if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(wd)) continue;
              acc += x(c, r, s) * w(o, c, a, b);
            }
        out(o, i, j) = acc;
      }
  return out;
}

template <typename T>
void expect_near(const Tensor<T>& a, const Tensor<T>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

TEST(Tensor, ShapeInvariant) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), cin::DimensionError);
  Tensor<float> z({0, 5});
  EXPECT_EQ(z.size(), 0u);
  EXPECT_EQ(Tensor<double>::scalar(2.5).rank(), 0u);
}

TEST(Tensor, IndexingIsRowMajor) {
  Tensor<int> t({2, 3}, std::vector<int>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t(1, 0), 3);
  EXPECT_EQ(t(0, 2), 2);
  EXPECT_THROW(t(2, 0), cin::DimensionError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  cin::Xoshiro256 rng(1);
  const auto a = cin::uniform_tensor<float>(rng, {3, 4});
  Tensor<float> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye(i, i) = 1;
  EXPECT_EQ(cin::matmul(eye, a), a);
}

TEST(Matmul, ZeroRightFactor) {
  Tensor<float> a({2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor<float> z({2, 1});
  EXPECT_EQ(cin::matmul(a, z), Tensor<float>({2, 1}));
}

TEST(Matmul, MatchesTripleLoop) {
  cin::Xoshiro256 rng(7);
  const auto a = cin::uniform_tensor<double>(rng, {5, 4});
  const auto b = cin::uniform_tensor<double>(rng, {4, 3});
  expect_near(cin::matmul(a, b), naive_matmul(a, b), 1e-14);
}

TEST(Matmul, Associative) {
  cin::Xoshiro256 rng(8);
  const auto a = cin::uniform_tensor<float>(rng, {8, 8});
  const auto b = cin::uniform_tensor<float>(rng, {8, 8});
  const auto c = cin::uniform_tensor<float>(rng, {8, 8});
  const auto l = cin::matmul(cin::matmul(a, b), c);
  const auto r = cin::matmul(a, cin::matmul(b, c));
  for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[i], 1e-5 * std::max(1.0f, std::abs(r[i])));
}

TEST(Matmul, RejectsInnerMismatch) {
  EXPECT_THROW(cin::matmul(Tensor<float>({2, 3}), Tensor<float>({2, 3})), cin::DimensionError);
}

TEST(ConvSpatial, UnitKernelIsIdentity) {
  cin::Xoshiro256 rng(2);
  const auto x = cin::uniform_tensor<float>(rng, {1, 4, 5});
  EXPECT_EQ(cin::conv_spatial(x, Tensor<float>({1, 1, 1, 1}, 1.0f)), x);
}

TEST(ConvSpatial, OnesKernelCounts) {
  const auto y = cin::conv_spatial(Tensor<float>({1, 4, 4}, 1.0f), Tensor<float>({1, 1, 3, 3}, 1.0f));
  EXPECT_EQ(y, Tensor<float>({1, 2, 2}, 9.0f));
}

TEST(ConvSpatial, MatchesLoopOracle) {
  cin::Xoshiro256 rng(11);
  const auto x = cin::uniform_tensor<double>(rng, {3, 6, 5});
  const auto w = cin::uniform_tensor<double>(rng, {4, 3, 3, 2});
  for (std::size_t p = 0; p < 3; ++p) {
    expect_near(cin::conv_spatial(x, w, {p, p / 2}), naive_conv(x, w, p, p / 2), 1e-13);
  }
}

TEST(ConvSpatial, PaddingEqualsExplicitZeros) {
  cin::Xoshiro256 rng(12);
  const auto x = cin::uniform_tensor<float>(rng, {2, 4, 4});
  const auto w = cin::uniform_tensor<float>(rng, {3, 2, 3, 3});
  Tensor<float> padded({2, 6, 6});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) padded(c, i + 1, j + 1) = x(c, i, j);
  expect_near(cin::conv_spatial(x, w, {1, 1}), cin::conv_spatial(padded, w), 1e-6);
}

TEST(ConvSpatial, RejectsOversizedKernel) {
  EXPECT_THROW(cin::conv_spatial(Tensor<float>({1, 2, 2}), Tensor<float>({1, 1, 3, 3})), cin::DimensionError);
  EXPECT_NO_THROW(cin::conv_spatial(Tensor<float>({1, 2, 2}), Tensor<float>({1, 1, 3, 3}), {1, 1}));
}

TEST(Elementwise, Basics) {
  EXPECT_EQ(cin::exp(Tensor<double>({3})), Tensor<double>({3}, 1.0));
  EXPECT_EQ(cin::relu(Tensor<float>({2}, std::vector<float>{-1, 2})), Tensor<float>({2}, std::vector<float>{0, 2}));
  const Tensor<float> x({2, 2}, std::vector<float>{1, -2, 3, 4});
  EXPECT_EQ(cin::add(x, 0.0f), x);
  EXPECT_EQ(cin::add(x, Tensor<float>::scalar(0)), x);
  EXPECT_EQ(cin::sub(x, x), Tensor<float>({2, 2}));
  EXPECT_EQ(cin::mul(x, Tensor<float>::scalar(2)), cin::scale(x, 2.0f));
  EXPECT_THROW(cin::add(x, Tensor<float>({4})), cin::DimensionError);
}

TEST(Reduce, SumAndMean) {
  const Tensor<float> x({2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(cin::sum(x, 1), Tensor<float>({2}, std::vector<float>{3, 7}));
  EXPECT_EQ(cin::mean(Tensor<double>({3, 4}, 2.5), 0), Tensor<double>({4}, 2.5));
  EXPECT_THROW(cin::sum(x, 2), cin::DimensionError);
}

TEST(Reduce, MaxMatchesSortOracle) {
  cin::Xoshiro256 rng(5);
  const auto x = cin::uniform_tensor<float>(rng, {4, 7, 3});
  const auto m = cin::max(x, 1);
  ASSERT_EQ(m.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<float> col;
      for (std::size_t j = 0; j < 7; ++j) col.push_back(x(i, j, k));
      std::sort(col.begin(), col.end());
      EXPECT_EQ(m(i, k), col.back());
    }
}

TEST(ShapeOps, SliceConcatRoundTrip) {
  cin::Xoshiro256 rng(3);
  const auto x = cin::uniform_tensor<float>(rng, {3, 5, 2});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t cut = x.extent(axis) / 2;
    const auto a = cin::slice(x, axis, 0, cut);
    const auto b = cin::slice(x, axis, cut, x.extent(axis));
    EXPECT_EQ(cin::concat(std::vector<Tensor<float>>{a, b}, axis), x);
  }
  EXPECT_THROW(cin::slice(x, 1, 3, 6), cin::DimensionError);
}

TEST(ShapeOps, TransposeReshapeStack) {
  const Tensor<float> x({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto t = cin::transpose(x);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t(2, 1), 6);
  EXPECT_EQ(cin::transpose(t), x);
  EXPECT_EQ(cin::reshape(x, {3, 2}).values(), x.values());
  EXPECT_THROW(cin::reshape(x, {4}), cin::DimensionError);
  const auto s = cin::stack(std::vector<Tensor<float>>{x, x}, {2, 3});
  EXPECT_EQ(s.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(cin::frame(s, 1), x);
  EXPECT_EQ(cin::stack(std::vector<Tensor<float>>{}, {2, 3}).shape(), (Shape{0, 2, 3}));
}

TEST(Blob, LittleEndianF32RoundTrip) {
  const Tensor<float> x({3}, std::vector<float>{1.0f, -2.5f, 0.0f});
  const auto bytes = cin::to_f32_blob(x);
  ASSERT_EQ(bytes.size(), 12u);
  // 1.0f is 0x3f800000.
  EXPECT_EQ(bytes[0], 0x00);
  EXPECT_EQ(bytes[3], 0x3f);
  EXPECT_EQ(cin::from_f32_blob<float>(bytes, {3}), x);
  EXPECT_THROW(cin::from_f32_blob<float>(bytes, {4}), cin::DimensionError);
}

}  // namespace
