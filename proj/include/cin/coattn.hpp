// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cin/conorm.hpp"
#include "cin/module.hpp"
#include "cin/tensor.hpp"

namespace cin {

/// Knobs of the continual attention caches.
struct AttnOptions {
  // Full recomputation of the cached normalizers and AV rows every this many
  // incremental updates; 0 never refreshes.
  std::size_t refresh_interval = 64;
  // Scaled logits are clamped to [-logit_clamp, logit_clamp] in the
  // continual paths so exp() stays finite through subtraction chains.
  double logit_clamp = 30.0;
  // Apply 1/sqrt(d) inside the retroactive update terms. Only a negative
  // control turns this off.
  bool scale_updates = true;
};

enum class AttnMode { kRetro, kSingle };

inline const char* to_string(AttnMode m) { return m == AttnMode::kRetro ? "retro" : "single"; }

/// Softmax attention over n tokens, computed directly in double precision:
/// D^-1 exp(Q K^T / sqrt(d)) V with D the row sums. Q, K are [n x d],
/// V is [n x d_v].
template <typename T>
Tensor<T> sda_full(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() ||
      v.extent(0) != k.extent(0)) {
    throw DimensionError("sda: expected Q, K [n x d] and V [n x d_v], got " +
                         to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                         to_string(v.shape()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(q.extent(1)));
  const Tensor<double> a = exp(scale(matmul(cast<double>(q), transpose(cast<double>(k))), s));
  const Tensor<double> row_sum = sum(a, 1);
  Tensor<double> av = matmul(a, cast<double>(v));
  const std::size_t n = av.extent(0), dv = av.extent(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dv; ++j) av[i * dv + j] /= row_sum[i];
  return cast<T>(av);
}

namespace detail {

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

template <typename T>
std::vector<T> as_row(const Tensor<T>& x, std::size_t width, const char* what) {
  if (x.size() != width || x.rank() > 1) {
    throw DimensionError(std::string(what) + ": expected a row of width " +
                         std::to_string(width) + ", got " + to_string(x.shape()));
  }
  return x.values();
}

struct LogitClamp {
  double limit;
  std::size_t* counter;
  double operator()(double z) const {
    if (z > limit) {
      ++*counter;
      return limit;
    }
    if (z < -limit) {
      ++*counter;
      return -limit;
    }
    return z;
  }
};

}  // namespace detail

/// Cache of the continual retroactive attention. Between steps it holds the
/// current window: the last n keys/values, the last n-1 queries and, per
/// window position, the softmax normalizer and unnormalized AV row in
/// double precision.
template <typename T>
struct RetroCache {
  RetroCache(std::size_t n_, std::size_t d_, std::size_t dv_ = 0, AttnOptions opts = {})
      : n(n_), d(d_), dv(dv_ == 0 ? d_ : dv_), options(opts) {
    if (n == 0 || d == 0) throw ArgumentError("retro attention: n and d must be >= 1");
  }

  std::size_t n, d, dv;
  AttnOptions options;
  std::deque<std::vector<T>> q_mem, k_mem, v_mem;
  std::deque<double> d_mem;
  std::deque<std::vector<double>> av_mem;
  std::size_t steps_seen = 0;
  std::size_t since_refresh = 0;
  std::size_t clamped_logits = 0;
  std::size_t refreshes = 0;
};

namespace detail {

template <typename T>
void retro_recompute(RetroCache<T>& c, const std::vector<std::vector<T>>& queries,
                     const LogitClamp& clamp, double s) {
  c.d_mem.clear();
  c.av_mem.clear();
  for (const auto& q : queries) {
    double norm = 0;
    std::vector<double> av(c.dv, 0.0);
    for (std::size_t j = 0; j < c.k_mem.size(); ++j) {
      const double e = std::exp(clamp(dot(q, c.k_mem[j]) * s));
      norm += e;
      for (std::size_t x = 0; x < c.dv; ++x) av[x] += e * c.v_mem[j][x];
    }
    c.d_mem.push_back(norm);
    c.av_mem.push_back(std::move(av));
  }
  c.since_refresh = 0;
  ++c.refreshes;
}

}  // namespace detail

/// One step of retroactive attention. Once n tokens have been seen, emits
/// the updated attention output for every token of the window [n x dv],
/// equal to sda_full over the window.
template <typename T>
StepOutput<T> retro_att_step(RetroCache<T>& c, const Tensor<T>& q_new, const Tensor<T>& k_new,
                             const Tensor<T>& v_new) {
  auto q = detail::as_row(q_new, c.d, "retro attention q");
  auto k = detail::as_row(k_new, c.d, "retro attention k");
  auto v = detail::as_row(v_new, c.dv, "retro attention v");
  const double s = 1.0 / std::sqrt(static_cast<double>(c.d));
  const double s_upd = c.options.scale_updates ? s : 1.0;
  const detail::LogitClamp clamp{c.options.logit_clamp, &c.clamped_logits};

  ++c.steps_seen;
  if (c.steps_seen < c.n) {
    c.q_mem.push_back(std::move(q));
    c.k_mem.push_back(std::move(k));
    c.v_mem.push_back(std::move(v));
    return std::nullopt;
  }

  const bool first = c.steps_seen == c.n;
  const bool refresh = !first && c.options.refresh_interval != 0 &&
                       c.since_refresh + 1 >= c.options.refresh_interval;
  if (first || refresh || c.n == 1) {
    if (c.k_mem.size() == c.n) {
      c.k_mem.pop_front();
      c.v_mem.pop_front();
    }
    c.k_mem.push_back(k);
    c.v_mem.push_back(v);
    std::vector<std::vector<T>> queries(c.q_mem.begin(), c.q_mem.end());
    queries.push_back(q);
    detail::retro_recompute(c, queries, clamp, s);
  } else {
    const std::vector<T> k_old = std::move(c.k_mem.front());
    const std::vector<T> v_old = std::move(c.v_mem.front());
    c.k_mem.pop_front();
    c.v_mem.pop_front();
    c.d_mem.pop_front();
    c.av_mem.pop_front();
    // Positions 1..n-1 of the previous window slide down by one.
    for (std::size_t i = 0; i < c.q_mem.size(); ++i) {
      const double e_old = std::exp(clamp(detail::dot(c.q_mem[i], k_old) * s_upd));
      const double e_new = std::exp(clamp(detail::dot(c.q_mem[i], k) * s_upd));
      c.d_mem[i] += e_new - e_old;
      auto& av = c.av_mem[i];
      for (std::size_t x = 0; x < c.dv; ++x) av[x] += e_new * v[x] - e_old * v_old[x];
    }
    c.k_mem.push_back(k);
    c.v_mem.push_back(v);
    // The newest row is computed from scratch.
    double norm = 0;
    std::vector<double> av(c.dv, 0.0);
    for (std::size_t j = 0; j < c.n; ++j) {
      const double e = std::exp(clamp(detail::dot(q, c.k_mem[j]) * s));
      norm += e;
      for (std::size_t x = 0; x < c.dv; ++x) av[x] += e * c.v_mem[j][x];
    }
    c.d_mem.push_back(norm);
    c.av_mem.push_back(std::move(av));
    ++c.since_refresh;
  }
  if (c.n > 1) {
    c.q_mem.push_back(std::move(q));
    if (c.q_mem.size() > c.n - 1) c.q_mem.pop_front();
  }

  Tensor<T> out({c.n, c.dv});
  for (std::size_t i = 0; i < c.n; ++i)
    for (std::size_t x = 0; x < c.dv; ++x)
      out[i * c.dv + x] = static_cast<T>(c.av_mem[i][x] / c.d_mem[i]);
  return out;
}

/// Cache of the continual single-output attention: the last n-1 keys and
/// values.
template <typename T>
struct SingleCache {
  SingleCache(std::size_t n_, std::size_t d_, std::size_t dv_ = 0, AttnOptions opts = {})
      : n(n_), d(d_), dv(dv_ == 0 ? d_ : dv_), options(opts) {
    if (n == 0 || d == 0) throw ArgumentError("single attention: n and d must be >= 1");
  }

  std::size_t n, d, dv;
  AttnOptions options;
  std::deque<std::vector<T>> k_mem, v_mem;
  std::size_t steps_seen = 0;
  std::size_t clamped_logits = 0;
};

/// One step of single-output attention: the attention output of query `q`
/// over the window of cached keys/values plus the new token [dv].
template <typename T>
StepOutput<T> single_att_step(SingleCache<T>& c, const Tensor<T>& q_in, const Tensor<T>& k_new,
                              const Tensor<T>& v_new) {
  const auto q = detail::as_row(q_in, c.d, "single attention q");
  auto k = detail::as_row(k_new, c.d, "single attention k");
  auto v = detail::as_row(v_new, c.dv, "single attention v");
  const double s = 1.0 / std::sqrt(static_cast<double>(c.d));
  const detail::LogitClamp clamp{c.options.logit_clamp, &c.clamped_logits};

  ++c.steps_seen;
  StepOutput<T> result;
  if (c.steps_seen >= c.n) {
    double norm = 0;
    std::vector<double> av(c.dv, 0.0);
    const auto accumulate = [&](const std::vector<T>& kj, const std::vector<T>& vj) {
      const double e = std::exp(clamp(detail::dot(q, kj) * s));
      norm += e;
      for (std::size_t x = 0; x < c.dv; ++x) av[x] += e * vj[x];
    };
    for (std::size_t j = 0; j < c.k_mem.size(); ++j) accumulate(c.k_mem[j], c.v_mem[j]);
    accumulate(k, v);
    Tensor<T> out({c.dv});
    for (std::size_t x = 0; x < c.dv; ++x) out[x] = static_cast<T>(av[x] / norm);
    result = std::move(out);
  }
  if (c.n > 1) {
    c.k_mem.push_back(std::move(k));
    c.v_mem.push_back(std::move(v));
    if (c.k_mem.size() > c.n - 1) {
      c.k_mem.pop_front();
      c.v_mem.pop_front();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

/// Projections of a multi-head attention over a window of n tokens. Head i
/// uses columns [i*dh, (i+1)*dh) of W_q, W_k, W_v (dh = d_model / heads);
/// the concatenated head outputs are projected by W_o.
template <typename T>
struct AttnSpec {
  std::size_t n = 1;
  std::size_t d_model = 1;
  std::size_t heads = 1;
  Tensor<T> w_q, w_k, w_v, w_o;  // each [d_model x d_model]
  AttnOptions options{};

  std::size_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (n == 0) throw ArgumentError("attention: window n must be >= 1");
    if (heads == 0 || d_model % heads != 0) {
      throw ArgumentError("attention: d_model must be divisible by heads");
    }
    const Shape sq{d_model, d_model};
    if (w_q.shape() != sq || w_k.shape() != sq || w_v.shape() != sq || w_o.shape() != sq) {
      throw DimensionError("attention: projections must be [d_model x d_model]");
    }
  }
};

namespace detail {

/// Columns [begin, begin + width) of a matrix.
template <typename T>
Tensor<T> columns(const Tensor<T>& m, std::size_t begin, std::size_t width) {
  return slice(m, 1, begin, begin + width);
}

template <typename T>
Tensor<T> row_times(const Tensor<T>& row, const Tensor<T>& m) {
  return matmul(row.reshaped({1, row.size()}), m).reshaped({m.extent(1)});
}

}  // namespace detail

/// Offline multi-head attention over a window: Xq, Xk, Xv are [n x d_model].
template <typename T>
Tensor<T> mha_full(const AttnSpec<T>& spec, const Tensor<T>& xq, const Tensor<T>& xk,
                   const Tensor<T>& xv) {
  const Tensor<T> q = matmul(xq, spec.w_q), k = matmul(xk, spec.w_k), v = matmul(xv, spec.w_v);
  const std::size_t dh = spec.head_dim();
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < spec.heads; ++h) {
    heads.push_back(sda_full(detail::columns(q, h * dh, dh), detail::columns(k, h * dh, dh),
                             detail::columns(v, h * dh, dh)));
  }
  return matmul(concat(heads, 1), spec.w_o);
}

template <typename T>
struct MhaCache {
  AttnMode mode = AttnMode::kSingle;
  std::vector<RetroCache<T>> retro;
  std::vector<SingleCache<T>> single;

  std::size_t clamped_logits() const {
    std::size_t c = 0;
    for (const auto& r : retro) c += r.clamped_logits;
    for (const auto& s : single) c += s.clamped_logits;
    return c;
  }
};

template <typename T>
MhaCache<T> make_mha_cache(const AttnSpec<T>& spec, AttnMode mode) {
  spec.validate();
  MhaCache<T> c;
  c.mode = mode;
  for (std::size_t h = 0; h < spec.heads; ++h) {
    if (mode == AttnMode::kRetro) {
      c.retro.emplace_back(spec.n, spec.head_dim(), spec.head_dim(), spec.options);
    } else {
      c.single.emplace_back(spec.n, spec.head_dim(), spec.head_dim(), spec.options);
    }
  }
  return c;
}

/// Continual multi-head attention step on token rows [d_model]. Emits
/// [n x d_model] in retro mode and [d_model] in single mode.
template <typename T>
StepOutput<T> comha_step(const AttnSpec<T>& spec, MhaCache<T>& cache, const Tensor<T>& x_q,
                         const Tensor<T>& x_k, const Tensor<T>& x_v) {
  for (const auto* x : {&x_q, &x_k, &x_v}) detail::as_row(*x, spec.d_model, "multi-head attention");
  const Tensor<T> q = detail::row_times(x_q, spec.w_q);
  const Tensor<T> k = detail::row_times(x_k, spec.w_k);
  const Tensor<T> v = detail::row_times(x_v, spec.w_v);
  const std::size_t dh = spec.head_dim();
  std::vector<Tensor<T>> heads;
  bool ready = true;
  for (std::size_t h = 0; h < spec.heads; ++h) {
    const Tensor<T> qh = slice(q, 0, h * dh, (h + 1) * dh);
    const Tensor<T> kh = slice(k, 0, h * dh, (h + 1) * dh);
    const Tensor<T> vh = slice(v, 0, h * dh, (h + 1) * dh);
    StepOutput<T> y = cache.mode == AttnMode::kRetro ? retro_att_step(cache.retro[h], qh, kh, vh)
                                                     : single_att_step(cache.single[h], qh, kh, vh);
    if (!y) {
      ready = false;
    } else {
      heads.push_back(std::move(*y));
    }
  }
  if (!ready) return std::nullopt;
  if (cache.mode == AttnMode::kRetro) return matmul(concat(heads, 1), spec.w_o);
  return detail::row_times(concat(heads, 0), spec.w_o);
}

// ---------------------------------------------------------------------------
// Recycling positional encoding
// ---------------------------------------------------------------------------

/// Positional encodings indexed by a modular time counter, so a cached token
/// keeps the encoding it was given on arrival.
template <typename T>
struct RpeState {
  std::shared_ptr<const Tensor<T>> encodings;  // [period x d_model]
  std::size_t tau = 0;

  std::size_t period() const { return encodings->extent(0); }
};

template <typename T>
RpeState<T> make_rpe_state(std::shared_ptr<const Tensor<T>> encodings) {
  if (!encodings || encodings->rank() != 2 || encodings->extent(0) == 0) {
    throw DimensionError("rpe: encodings must be [period x d_model] with period >= 1");
  }
  return {std::move(encodings), 0};
}

/// Returns x_t + p[tau] and advances tau modulo the period.
template <typename T>
Tensor<T> rpe_step(RpeState<T>& st, const Tensor<T>& x) {
  const Tensor<T>& p = *st.encodings;
  const std::size_t d = p.extent(1);
  detail::as_row(x, d, "rpe");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < d; ++i) out[i] = x[i] + p[st.tau * d + i];
  st.tau = (st.tau + 1) % st.period();
  return out;
}

/// Offline counterpart: token t of the clip gets p[t mod period].
template <typename T>
Tensor<T> rpe_apply(const Tensor<T>& encodings, const Tensor<T>& clip) {
  const std::size_t d = encodings.extent(1);
  if (clip.rank() != 2 || clip.extent(1) != d) throw DimensionError("rpe: clip must be [T x d_model]");
  Tensor<T> out = clip;
  for (std::size_t t = 0; t < clip.extent(0); ++t)
    for (std::size_t i = 0; i < d; ++i) out[t * d + i] += encodings[(t % encodings.extent(0)) * d + i];
  return out;
}

// ---------------------------------------------------------------------------
// Encoder block
// ---------------------------------------------------------------------------

/// Transformer encoder block with continual attention:
///   y = LayerNorm(Sel(x) + MHA(x, x, x)),  z = LayerNorm(y + FF(y)),
///   FF(y) = ReLU(y W1 + b1) W2 + b2 per token.
/// Sel is the whole window in retro mode and the newest token in single
/// mode. `rpe` ([period x d_model]) may be null for no positional encoding.
template <typename T>
struct EncoderBlockSpec {
  AttnSpec<T> attn;
  LayerNormSpec<T> ln1, ln2;
  Tensor<T> w1, b1, w2, b2;  // [d_model x ff], [ff], [ff x d_model], [d_model]
  AttnMode mode = AttnMode::kSingle;
  std::shared_ptr<const Tensor<T>> rpe;

  std::size_t n() const { return attn.n; }
  std::size_t d_model() const { return attn.d_model; }
  std::size_t ff_dim() const { return w1.rank() == 2 ? w1.extent(1) : 0; }

  void validate() const {
    attn.validate();
    ln1.validate();
    ln2.validate();
    const std::size_t d = attn.d_model;
    if (ln1.features() != d || ln2.features() != d) throw DimensionError("encoder: layernorm width != d_model");
    if (w1.rank() != 2 || w1.extent(0) != d || b1.shape() != Shape{w1.extent(1)} ||
        w2.shape() != Shape{w1.extent(1), d} || b2.shape() != Shape{d}) {
      throw DimensionError("encoder: feed-forward weights must be [d x ff], [ff], [ff x d], [d]");
    }
    if (rpe && (rpe->rank() != 2 || rpe->extent(1) != d || rpe->extent(0) == 0)) {
      throw DimensionError("encoder: positional encodings must be [period x d_model]");
    }
  }
};

namespace detail {

/// Per-token tail of the block: LN2(y + FF(y)) with y = LN1(sel + att).
template <typename T>
Tensor<T> encoder_tail(const EncoderBlockSpec<T>& spec, const Tensor<T>& sel, const Tensor<T>& att) {
  const std::size_t d = spec.d_model();
  const Tensor<T> rows_sel = sel.reshaped({sel.size() / d, d});
  const Tensor<T> rows_att = att.reshaped({att.size() / d, d});
  const Tensor<T> y = ln_apply(spec.ln1, add(rows_sel, rows_att));
  Tensor<T> h = matmul(y, spec.w1);
  const std::size_t f = spec.ff_dim();
  for (std::size_t r = 0; r < h.extent(0); ++r)
    for (std::size_t j = 0; j < f; ++j) h[r * f + j] += spec.b1[j];
  Tensor<T> ff = matmul(relu(h), spec.w2);
  for (std::size_t r = 0; r < ff.extent(0); ++r)
    for (std::size_t j = 0; j < d; ++j) ff[r * d + j] += spec.b2[j];
  return ln_apply(spec.ln2, add(y, ff)).reshaped(sel.shape());
}

}  // namespace detail

/// Offline block over one window X [n x d_model] (positional encodings
/// already applied); returns [n x d_model].
template <typename T>
Tensor<T> encoder_block_window(const EncoderBlockSpec<T>& spec, const Tensor<T>& x) {
  return detail::encoder_tail(spec, x, mha_full(spec.attn, x, x, x));
}

/// Offline block output for only the newest token of a window X
/// [n x d_model]; equals the last row of encoder_block_window.
template <typename T>
Tensor<T> encoder_block_last(const EncoderBlockSpec<T>& spec, const Tensor<T>& x) {
  if (x.rank() != 2 || x.extent(1) != spec.d_model()) {
    throw DimensionError("encoder: window must be [n x d_model], got " + to_string(x.shape()));
  }
  const std::size_t n = x.extent(0), d = spec.d_model(), dh = spec.attn.head_dim();
  const Tensor<T> last = slice(x, 0, n - 1, n);
  const Tensor<T> q = matmul(last, spec.attn.w_q);
  const Tensor<T> k = matmul(x, spec.attn.w_k), v = matmul(x, spec.attn.w_v);
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < spec.attn.heads; ++h) {
    // Query row attends over all n keys: the last row of the full SDA.
    const Tensor<T> qh = detail::columns(q, h * dh, dh);
    const Tensor<T> kh = detail::columns(k, h * dh, dh), vh = detail::columns(v, h * dh, dh);
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    double norm = 0;
    std::vector<double> av(dh, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double z = 0;
      for (std::size_t c = 0; c < dh; ++c) z += static_cast<double>(qh[c]) * kh[j * dh + c];
      const double e = std::exp(z * s);
      norm += e;
      for (std::size_t c = 0; c < dh; ++c) av[c] += e * vh[j * dh + c];
    }
    Tensor<T> out({1, dh});
    for (std::size_t c = 0; c < dh; ++c) out[c] = static_cast<T>(av[c] / norm);
    heads.push_back(std::move(out));
  }
  const Tensor<T> att = matmul(concat(heads, 1), spec.attn.w_o);
  return detail::encoder_tail(spec, last, att).reshaped({d});
}

/// Offline clip mode over [T x d_model]: every complete window of n tokens
/// (positions encoded by absolute index) goes through the block. Retro mode
/// yields [T-n+1 x n x d_model]; single mode keeps the newest token of each
/// window, [T-n+1 x d_model].
template <typename T>
Tensor<T> encoder_block_forward(const EncoderBlockSpec<T>& spec, const Tensor<T>& clip) {
  if (clip.rank() != 2 || clip.extent(1) != spec.d_model()) {
    throw DimensionError("encoder: clip must be [T x d_model], got " + to_string(clip.shape()));
  }
  const Tensor<T> x = spec.rpe ? rpe_apply(*spec.rpe, clip) : clip;
  const std::size_t n = spec.n(), len = x.extent(0);
  std::vector<Tensor<T>> out;
  for (std::size_t t = n; t <= len; ++t) {
    const Tensor<T> window = slice(x, 0, t - n, t);
    out.push_back(spec.mode == AttnMode::kRetro ? encoder_block_window(spec, window)
                                                : encoder_block_last(spec, window));
  }
  const Shape fs = spec.mode == AttnMode::kRetro ? Shape{n, spec.d_model()} : Shape{spec.d_model()};
  return stack(out, fs);
}

template <typename T>
struct EncoderBlockState : State {
  std::optional<RpeState<T>> rpe;
  MhaCache<T> mha;
  std::deque<Tensor<T>> tokens;  // last n encoded tokens (retro mode)
};

template <typename T>
EncoderBlockState<T> init_state(const EncoderBlockSpec<T>& spec) {
  spec.validate();
  EncoderBlockState<T> st;
  if (spec.rpe) st.rpe = make_rpe_state(spec.rpe);
  st.mha = make_mha_cache(spec.attn, spec.mode);
  return st;
}

/// Consumes one token [d_model]. Emits [n x d_model] (retro) or
/// [d_model] (single) once n tokens have been seen.
template <typename T>
StepOutput<T> encoder_block_step(const EncoderBlockSpec<T>& spec, EncoderBlockState<T>& st,
                                 const Tensor<T>& x_t) {
  detail::as_row(x_t, spec.d_model(), "encoder");
  const Tensor<T> x = st.rpe ? rpe_step(*st.rpe, x_t) : x_t;
  if (spec.mode == AttnMode::kRetro) {
    st.tokens.push_back(x);
    if (st.tokens.size() > spec.n()) st.tokens.pop_front();
  }
  StepOutput<T> att = comha_step(spec.attn, st.mha, x, x, x);
  if (!att) return std::nullopt;
  if (spec.mode == AttnMode::kRetro) {
    const Tensor<T> window = stack(std::vector<Tensor<T>>(st.tokens.begin(), st.tokens.end()),
                                   Shape{spec.d_model()});
    return detail::encoder_tail(spec, window, *att);
  }
  return detail::encoder_tail(spec, x, *att);
}

namespace detail {

/// Projections, residual, norms and feed-forward for `rows` tokens
/// (everything except the attention core and Q/K/V projections).
inline Cost encoder_rows_cost(std::size_t rows, std::size_t d, std::size_t f) {
  Cost c{rows * d * d, rows * d};                // W_o, residual add
  c += ln_cost(rows, d) * 2;                     // two layer norms
  c += Cost{rows * 2 * d * f, rows * (f + d)};   // FF matmuls, biases
  c += Cost{0, rows * (f + d)};                  // ReLU, residual add
  return c;
}

/// Offline SDA core per head over n tokens of width dh:
/// QK^T, exp, row sums, AV, normalization.
inline Cost sda_cost(std::size_t n, std::size_t dh) {
  return {2 * n * n * dh, n * n * 2 + n * dh};
}

}  // namespace detail

/// Continual encoder block on a token stream.
template <typename T>
class CoEncoderBlock final : public Module<T> {
 public:
  explicit CoEncoderBlock(std::shared_ptr<const EncoderBlockSpec<T>> spec) : spec_(std::move(spec)) {
    spec_->validate();
  }
  const EncoderBlockSpec<T>& spec() const { return *spec_; }

  std::string kind() const override { return "co_encoder_block"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in != Shape{spec_->d_model()}) {
      throw DimensionError("co_encoder_block: expected token frame [" +
                           std::to_string(spec_->d_model()) + "], got " + to_string(in));
    }
    return spec_->mode == AttnMode::kRetro ? Shape{spec_->n(), spec_->d_model()} : in;
  }
  std::size_t delay() const override { return spec_->n() - 1; }
  std::size_t receptive_field() const override { return spec_->n(); }

  Tensor<T> forward(const Tensor<T>& clip) const override {
    return encoder_block_forward(*spec_, clip);
  }
  std::unique_ptr<State> make_state() const override {
    return std::make_unique<EncoderBlockState<T>>(init_state(*spec_));
  }
  StepOutput<T> forward_step(State& s, const Tensor<T>& x) const override {
    return encoder_block_step(*spec_, detail::state_cast<EncoderBlockState<T>>(s), x);
  }

  /// Every token: positional encoding and its Q/K/V projections. Per
  /// emission, single mode: one query over n keys per head plus one row
  /// of the per-token tail. Retro mode: 2(n-1) update logits, one fresh
  /// row of n logits per head, and the tail for all n rows. Periodic
  /// refreshes of the retro cache are not included.
  StepCost step_cost(const Shape&) const override {
    const std::size_t n = spec_->n(), d = spec_->d_model(), f = spec_->ff_dim();
    const std::size_t h = spec_->attn.heads, dh = spec_->attn.head_dim();
    StepCost c;
    c.per_input = Cost{3 * d * d, spec_->rpe ? d : 0};
    if (spec_->mode == AttnMode::kSingle) {
      c.per_emission = Cost{h * 2 * n * dh, h * (2 * n + dh)};
      c.per_emission += detail::encoder_rows_cost(1, d, f);
    } else {
      const std::size_t upd = 2 * (n - 1);
      // update logits + AV updates, fresh row logits + AV, normalization
      c.per_emission = Cost{h * (2 * upd * dh + 2 * n * dh), h * (upd * 2 + 2 * n + n * dh)};
      c.per_emission += detail::encoder_rows_cost(n, d, f);
    }
    return c;
  }

  /// Each window is processed from scratch: projections of all n tokens,
  /// full attention, and the tail for all rows (retro) or the newest row
  /// (single) per window.
  Cost clip_cost(const Shape&, std::size_t len) const override {
    const std::size_t n = spec_->n(), d = spec_->d_model(), f = spec_->ff_dim();
    const std::size_t h = spec_->attn.heads, dh = spec_->attn.head_dim();
    Cost window{3 * n * d * d, 0};
    window += detail::sda_cost(n, dh) * h;
    window += detail::encoder_rows_cost(n, d, f);
    return Cost{0, spec_->rpe ? len * d : 0} + window * this->out_len(len);
  }

 private:
  std::shared_ptr<const EncoderBlockSpec<T>> spec_;
};

/// Single-output block over an already assembled window [n x d_model],
/// e.g. the output of a preceding retro block. Stateless: every step emits
/// the block output of the newest token.
template <typename T>
class WindowEncoderBlock final : public StatelessModule<T> {
 public:
  explicit WindowEncoderBlock(std::shared_ptr<const EncoderBlockSpec<T>> spec) : spec_(std::move(spec)) {
    spec_->validate();
    if (spec_->rpe) throw ArgumentError("window encoder block: positional encodings not supported");
  }

  std::string kind() const override { return "co_encoder_block"; }
  Shape out_frame_shape(const Shape& in) const override {
    if (in.size() != 2 || in[1] != spec_->d_model()) {
      throw DimensionError("window encoder block: expected [n x " + std::to_string(spec_->d_model()) +
                           "], got " + to_string(in));
    }
    return {spec_->d_model()};
  }
  Tensor<T> forward_frame(const Tensor<T>& x) const override { return encoder_block_last(*spec_, x); }
  Cost frame_cost(const Shape& in) const override {
    const std::size_t n = in[0], d = spec_->d_model(), f = spec_->ff_dim();
    const std::size_t h = spec_->attn.heads, dh = spec_->attn.head_dim();
    Cost c{d * d + 2 * n * d * d, 0};
    c += Cost{h * 2 * n * dh, h * (2 * n + dh)};
    c += detail::encoder_rows_cost(1, d, f);
    return c;
  }

 private:
  std::shared_ptr<const EncoderBlockSpec<T>> spec_;
};

}  // namespace cin
