// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cin/bench/config.hpp"

namespace cin::bench {

enum class Mode { kOffline, kStep };

inline const char* to_string(Mode m) { return m == Mode::kOffline ? "offline" : "step"; }

// ---------------------------------------------------------------------------
// FLOP counting
// ---------------------------------------------------------------------------

struct FlopCount {
  Mode mode = Mode::kStep;
  std::size_t length = 0;
  std::vector<LayerCost> layers;
  Cost total;
  std::size_t predictions = 0;  // outputs the counted work produces
};

/// Offline: one forward() over a clip of `length` frames, i.e. the cost of
/// a sliding-window prediction that recomputes the whole clip.
/// Step: the steady-state cost of one prediction in step mode (one input
/// step times the model stride). `length` is carried along for the report.
template <typename T>
FlopCount count_flops(const BuiltModel<T>& m, Mode mode, std::size_t length) {
  FlopCount fc;
  fc.mode = mode;
  fc.length = length;
  CountContext ctx;
  ctx.in_frame = m.input_frame;
  if (mode == Mode::kOffline) {
    ctx.mode = CountMode::kOffline;
    ctx.in_len = length;
    fc.predictions = m.net->out_len(length);
  } else {
    ctx.mode = CountMode::kStepPrediction;
    ctx.in_len = m.net->stride();
    ctx.inputs_per_prediction = m.net->stride();
    fc.predictions = 1;
  }
  m.net->count(ctx, fc.layers);
  for (const auto& l : fc.layers) fc.total += l.cost;
  return fc;
}

/// Step-mode total for a stream of `length` inputs (warm-up included).
template <typename T>
Cost count_stream(const BuiltModel<T>& m, std::size_t length) {
  CountContext ctx{CountMode::kStepStream, m.input_frame, length, 1, ""};
  std::vector<LayerCost> parts;
  m.net->count(ctx, parts);
  Cost c;
  for (const auto& p : parts) c += p.cost;
  return c;
}

// ---------------------------------------------------------------------------
// Equivalence
// ---------------------------------------------------------------------------

struct Equivalence {
  std::size_t length = 0;
  std::uint64_t seed = 0;
  double tol = 0;
  std::size_t offline_frames = 0;
  std::size_t step_frames = 0;
  std::size_t compared_frames = 0;
  double max_abs = 0;
  double max_rel = 0;
  bool negative_control = false;
  bool pass = false;
};

/// Elementwise check |a - b| <= tol * max(1, |b|) with b the offline value.
/// Reports the largest absolute and relative deviations.
template <typename T>
void compare_into(const Tensor<T>& a, const Tensor<T>& b, double tol, Equivalence& r, bool& ok) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double diff = std::abs(x - y);
    if (std::isnan(diff)) {
      ok = false;
      r.max_abs = r.max_rel = std::numeric_limits<double>::infinity();
      continue;
    }
    r.max_abs = std::max(r.max_abs, diff);
    r.max_rel = std::max(r.max_rel, diff / std::max(1.0, std::abs(y)));
    if (diff > tol * std::max(1.0, std::abs(y))) ok = false;
  }
}

/// Feeds the same uniform random clip of `length` frames through forward()
/// and forward_steps() on a fresh state. With `negative_control` the offline
/// side is the end-padded acausal variant and the two output sequences are
/// aligned at their last frame, i.e. both answer for the newest input.
template <typename T>
Equivalence check_equivalence(const BuiltModel<T>& m, std::size_t length, std::uint64_t seed, double tol,
                              bool negative_control = false) {
  if (length < m.net->receptive_field()) {
    throw ArgumentError("check: length " + std::to_string(length) + " is shorter than the receptive field " +
                        std::to_string(m.net->receptive_field()));
  }
  Xoshiro256 rng(seed);
  const Tensor<T> clip = uniform_tensor<T>(rng, prepend(length, m.input_frame));
  const Tensor<T> off = negative_control ? m.net->forward_end_padded(clip) : m.net->forward(clip);
  auto st = m.net->make_state();
  const Tensor<T> on = m.net->forward_steps(*st, clip);

  Equivalence r;
  r.length = length;
  r.seed = seed;
  r.tol = tol;
  r.negative_control = negative_control;
  r.offline_frames = off.extent(0);
  r.step_frames = on.extent(0);
  bool ok = negative_control || r.offline_frames == r.step_frames;
  const std::size_t n = std::min(r.offline_frames, r.step_frames);
  r.compared_frames = n;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t ko = negative_control ? r.offline_frames - n + k : k;
    const std::size_t ks = negative_control ? r.step_frames - n + k : k;
    compare_into(frame(on, ks), frame(off, ko), tol, r, ok);
  }
  r.pass = ok && n > 0;
  return r;
}

// ---------------------------------------------------------------------------
// Throughput
// ---------------------------------------------------------------------------

struct Throughput {
  Mode mode = Mode::kStep;
  std::size_t length = 0;
  std::size_t warmup = 0;
  std::size_t repeats = 0;
  std::size_t iterations = 0;      // calls per repeat
  std::size_t preds_per_call = 0;  // predictions one call produces
  std::vector<double> rates;       // calls per second, one per kept repeat
  double median = 0;               // calls per second
  double preds_per_second = 0;
  bool no_data = false;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Wall-clock throughput of one stream on the calling thread.
///  step:    calls are forward_step on a stream that stays warm across
///           repeats; the result is steps/s.
///  offline: calls are forward() on a clip of `length` frames; the result
///           is clips/s, and preds/s = clips/s * outputs per clip.
/// Each repeat runs enough calls to last about `min_repeat_seconds`.
/// `warmup` repeats are discarded; the median of `repeats` is reported.
template <typename T>
Throughput measure_throughput(const BuiltModel<T>& m, Mode mode, std::size_t length, std::size_t warmup,
                              std::size_t repeats, double min_repeat_seconds = 0.05) {
  if (repeats < 3) throw ArgumentError("throughput: repeats must be >= 3");
  Throughput r;
  r.mode = mode;
  r.length = length;
  r.warmup = warmup;
  r.repeats = repeats;
  if (length == 0) {
    r.no_data = true;
    return r;
  }
  Xoshiro256 rng(0x5eed);
  const Tensor<T> clip = uniform_tensor<T>(rng, prepend(length, m.input_frame));

  std::function<void()> call;
  auto state = m.net->make_state();
  std::size_t cursor = 0;
  std::vector<Tensor<T>> frames;
  if (mode == Mode::kStep) {
    for (std::size_t t = 0; t < length; ++t) frames.push_back(frame(clip, t));
    // Warm the stream so every timed step is a steady-state step.
    for (std::size_t t = 0; t < m.net->receptive_field(); ++t) m.net->forward_step(*state, frames[t % length]);
    call = [&] {
      auto y = m.net->forward_step(*state, frames[cursor]);
      cursor = (cursor + 1) % length;
      (void)y;
    };
    r.preds_per_call = 1;
  } else {
    call = [&] {
      auto y = m.net->forward(clip);
      (void)y;
    };
    r.preds_per_call = m.net->out_len(length);
  }
  // Calibrate the number of calls per repeat.
  std::size_t iters = 1;
  for (;;) {
    const double s = detail::seconds([&] {
      for (std::size_t i = 0; i < iters; ++i) call();
    });
    if (s >= min_repeat_seconds / 4 || iters >= (std::size_t{1} << 30)) {
      iters = std::max<std::size_t>(1, static_cast<std::size_t>(iters * min_repeat_seconds / std::max(s, 1e-9)));
      break;
    }
    iters *= 4;
  }
  r.iterations = iters;
  for (std::size_t rep = 0; rep < warmup + repeats; ++rep) {
    const double s = detail::seconds([&] {
      for (std::size_t i = 0; i < iters; ++i) call();
    });
    if (rep >= warmup) r.rates.push_back(static_cast<double>(iters) / s);
  }
  r.median = detail::median_of(r.rates);
  r.preds_per_second = r.median * static_cast<double>(r.preds_per_call);
  return r;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct Report {
  std::string command;
  std::string model;
  DType dtype = DType::kF32;
  Mode mode = Mode::kStep;
  std::size_t length = 0;
  std::optional<FlopCount> flops;
  std::optional<Equivalence> equivalence;
  std::optional<Throughput> throughput;
  bool pass = true;
};

inline Json cost_json(const Cost& c) {
  Json j;
  j["macs"] = c.macs;
  j["other"] = c.other;
  j["flops"] = c.flops();
  return j;
}

/// Host description, kept apart so the rest of the report is reproducible.
inline Json environment_json() {
  Json env;
  env["compiler"] =
#if defined(__clang__)
      "clang " __clang_version__;
#elif defined(__GNUC__)
      "gcc " __VERSION__;
#else
      "unknown";
#endif
  env["hardware_threads"] = std::thread::hardware_concurrency();
  env["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
  return env;
}

inline Json report_json(const Report& r, bool with_environment = true) {
  Json j;
  j["tool"] = "cinbench";
  j["command"] = r.command;
  j["model"] = r.model;
  j["dtype"] = to_string(r.dtype);
  j["mode"] = to_string(r.mode);
  j["T"] = r.length;
  j["conventions"] = {
      {"flops", "2 * macs + other"},
      {"other", "add, subtract, exp, division and comparison count 1 each"},
      {"step_flops", "steady-state cost of one prediction"},
      {"offline_flops", "one forward over T frames (sliding-window recomputation)"},
      {"prng", kPrngName},
      {"threads", 1},
      {"batch", 1}};
  if (r.flops) {
    Json layers = Json::array();
    for (const auto& l : r.flops->layers) {
      Json e = cost_json(l.cost);
      e["name"] = l.name;
      layers.push_back(std::move(e));
    }
    j["flops"] = {{"layers", layers}, {"total", cost_json(r.flops->total)}, {"predictions", r.flops->predictions}};
  }
  if (r.equivalence) {
    const auto& e = *r.equivalence;
    j["equivalence"] = {{"seed", e.seed},
                        {"tol", e.tol},
                        {"offline_frames", e.offline_frames},
                        {"step_frames", e.step_frames},
                        {"compared_frames", e.compared_frames},
                        {"max_abs", e.max_abs},
                        {"max_rel", e.max_rel},
                        {"negative_control", e.negative_control},
                        {"pass", e.pass}};
  }
  if (r.throughput) {
    const auto& t = *r.throughput;
    Json tj;
    tj["unit"] = t.mode == Mode::kStep ? "steps/s" : "clips/s";
    tj["warmup"] = t.warmup;
    tj["repeats"] = t.repeats;
    if (t.no_data) {
      tj["no_data"] = true;
    } else {
      tj["iterations_per_repeat"] = t.iterations;
      tj["median"] = t.median;
      tj["samples"] = t.rates;
      tj["preds_per_call"] = t.preds_per_call;
      tj["preds_per_second"] = t.preds_per_second;
    }
    j["throughput"] = std::move(tj);
  }
  j["status"] = r.pass ? "pass" : "fail";
  if (with_environment) j["environment"] = environment_json();
  return j;
}

/// command,model,dtype,mode,T,macs,flops,max_abs,max_rel,median_per_s,status
inline std::string report_csv(const Report& r) {
  std::ostringstream os;
  os << r.command << ',' << r.model << ',' << to_string(r.dtype) << ',' << to_string(r.mode) << ',' << r.length
     << ',';
  if (r.flops) {
    os << r.flops->total.macs << ',' << r.flops->total.flops();
  } else {
    os << ',';
  }
  os << ',';
  if (r.equivalence) {
    os << r.equivalence->max_abs << ',' << r.equivalence->max_rel;
  } else {
    os << ',';
  }
  os << ',';
  if (r.throughput) {
    if (r.throughput->no_data) {
      os << "no_data";
    } else {
      os << r.throughput->median;
    }
  }
  os << ',' << (r.pass ? "pass" : "fail");
  return os.str();
}

}  // namespace cin::bench
