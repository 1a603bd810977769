// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace cin {

/// Analytic arithmetic count. A multiply-accumulate is two FLOPs; every
/// other counted operation (add, subtract, exp, division, comparison) is one.
struct Cost {
  std::uint64_t macs = 0;
  std::uint64_t other = 0;

  std::uint64_t flops() const { return 2 * macs + other; }

  Cost& operator+=(const Cost& c) {
    macs += c.macs;
    other += c.other;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
  friend Cost operator*(Cost a, std::uint64_t k) {
    a.macs *= k;
    a.other *= k;
    return a;
  }
  friend bool operator==(const Cost&, const Cost&) = default;
};

/// Cost of step-mode operation split by when it is paid: every consumed
/// input step, or only on steps that emit an output.
struct StepCost {
  Cost per_input;
  Cost per_emission;
};

struct LayerCost {
  std::string name;
  Cost cost;
};

}  // namespace cin
