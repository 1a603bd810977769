// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "cin/cin.hpp"

namespace cin::test {

template <typename T>
::testing::AssertionResult all_close(const Tensor<T>& a, const Tensor<T>& b, double tol) {
  if (a.shape() != b.shape()) {
    return ::testing::AssertionFailure() << "shape " << to_string(a.shape()) << " vs " << to_string(b.shape());
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    if (!(std::abs(x - y) <= tol * std::max(1.0, std::abs(y)))) {
      return ::testing::AssertionFailure() << "element " << i << ": " << x << " vs " << y;
    }
  }
  return ::testing::AssertionSuccess();
}

template <typename T>
Tensor<T> run_steps(const Module<T>& m, const Tensor<T>& clip) {
  auto st = m.make_state();
  return m.forward_steps(*st, clip);
}

/// Direct 3D convolution over the zero-prefixed clip, no shared code with
/// the library kernels.
template <typename T>
Tensor<T> naive_conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t dil,
                       std::size_t pad_t, std::size_t stride, std::size_t ph, std::size_t pw) {
  const std::size_t len = x.extent(0), ci = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const std::size_t co = w.extent(0), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
  const std::size_t rf = (kt - 1) * dil + 1;
  const std::size_t total = len + pad_t;
  const std::size_t n = total >= rf ? (total - rf) / stride + 1 : 0;
  const std::size_t ho = h + 2 * ph - kh + 1, wo = wd + 2 * pw - kw + 1;
  Tensor<T> y({n, co, ho, wo});
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = b[o];
          for (std::size_t k = 0; k < kt; ++k) {
            const long e = static_cast<long>(m * stride + k * dil) - static_cast<long>(pad_t);
            if (e < 0 || e >= static_cast<long>(len)) continue;
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t a = 0; a < kh; ++a)
                for (std::size_t q = 0; q < kw; ++q) {
                  const long r = static_cast<long>(i + a) - static_cast<long>(ph);
                  const long s = static_cast<long>(j + q) - static_cast<long>(pw);
                  if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(wd)) continue;
                  acc += static_cast<double>(x(static_cast<std::size_t>(e), c, r, s)) * w(o, c, k, a, q);
                }
          }
          y(m, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

template <typename T>
std::shared_ptr<CoConvSpec<T>> random_conv(Xoshiro256& rng, CoConvParams p) {
  auto w = uniform_tensor<T>(rng, {p.c_out, p.c_in, p.k_t, p.k_h, p.k_w}, -0.5, 0.5);
  auto b = uniform_tensor<T>(rng, {p.c_out}, -0.5, 0.5);
  return std::make_shared<CoConvSpec<T>>(p, std::move(w), std::move(b));
}

}  // namespace cin::test
