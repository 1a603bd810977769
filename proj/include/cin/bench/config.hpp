// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cin/cin.hpp"

namespace cin::bench {

using Json = nlohmann::ordered_json;

enum class DType { kF32, kF64 };

inline const char* to_string(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

/// A model description: name, element type, the shape of one input frame
/// and the list of layer entries (kept as JSON; built on demand).
struct ModelConfig {
  std::string name;
  DType dtype = DType::kF32;
  Shape input_shape;
  Json layers = Json::array();
  // Directory used to resolve relative blob paths. Not serialized.
  std::filesystem::path base_dir;
};

namespace detail {

/// Typed, path-aware access to one JSON object. Every key must be consumed
/// before `finish()`, so misspelled fields are reported instead of ignored.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(at(key), "required field is missing");
    used_.insert(key);
    return j_.at(key);
  }

  std::size_t size(const std::string& key) { return as_size(raw(key), at(key)); }
  std::size_t size(const std::string& key, std::size_t def) { return has(key) ? size(key) : def; }

  double number(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double def) { return has(key) ? number(key) : def; }

  std::string text(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& def) { return has(key) ? text(key) : def; }

  bool flag(const std::string& key, bool def) {
    if (!has(key)) return def;
    const Json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::vector<std::size_t> sizes(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_size(v[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(at(key), "unknown field");
    }
  }

  static std::size_t as_size(const Json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(path, "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p, const std::string& cfg_path) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(cfg_path, "cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Deterministic parameter source for one layer entry.
///
///   {"scheme":"uniform","seed":S[,"lo":a,"hi":b]}
///       One Xoshiro256 stream per entry, drawn in parameter order. Without
///       lo/hi, weights use +-1/sqrt(fan_in) and norm parameters +-0.1.
///       gamma = 1 + U, beta = U, running mean = U, running var = 1 + |U|.
///   {"scheme":"constant","value":c}
///       Every parameter is c, except running variances which are 1.
///   {"scheme":"blob","path":"file.f32"}
///       Parameters read in order from a flat little-endian f32 file.
class Initializer {
 public:
  Initializer(const Json& j, const std::string& path, const std::filesystem::path& base_dir) : path_(path) {
    detail::Fields f(j, path);
    scheme_ = f.text("scheme");
    if (scheme_ == "uniform") {
      rng_ = std::make_unique<Xoshiro256>(static_cast<std::uint64_t>(f.size("seed")));
      if (f.has("lo") || f.has("hi")) {
        lo_ = f.number("lo");
        hi_ = f.number("hi");
        explicit_range_ = true;
        if (!(lo_ <= hi_)) throw ConfigError(f.at("hi"), "hi must be >= lo");
      }
    } else if (scheme_ == "constant") {
      value_ = f.number("value");
    } else if (scheme_ == "blob") {
      std::filesystem::path p = f.text("path");
      if (p.is_relative()) p = base_dir / p;
      blob_ = detail::read_file_bytes(p, f.at("path"));
      if (blob_.size() % 4 != 0) throw ConfigError(f.at("path"), "blob size is not a multiple of 4");
    } else {
      throw ConfigError(f.at("scheme"), "unknown scheme '" + scheme_ + "' (uniform, constant, blob)");
    }
    f.finish();
  }

  template <typename T>
  Tensor<T> weight(Shape s, std::size_t fan_in) {
    const double r = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    return draw<T>(std::move(s), [&](double u) { return u; }, -r, r, value_);
  }
  template <typename T>
  Tensor<T> gamma(Shape s) {
    return draw<T>(std::move(s), [](double u) { return 1.0 + u; }, -0.1, 0.1, value_);
  }
  template <typename T>
  Tensor<T> beta(Shape s) {
    return draw<T>(std::move(s), [](double u) { return u; }, -0.1, 0.1, value_);
  }
  template <typename T>
  Tensor<T> variance(Shape s) {
    return draw<T>(std::move(s), [](double u) { return 1.0 + std::abs(u); }, -0.1, 0.1, 1.0);
  }

  /// Blob inputs must be consumed exactly.
  void finish() const {
    if (scheme_ == "blob" && offset_ != blob_.size()) {
      throw ConfigError(path_, "blob holds " + std::to_string(blob_.size() / 4) + " values, layer used " +
                                   std::to_string(offset_ / 4));
    }
  }

 private:
  template <typename T, typename F>
  Tensor<T> draw(Shape s, F map, double lo, double hi, double constant) {
    Tensor<T> out(std::move(s));
    if (scheme_ == "uniform") {
      if (explicit_range_) {
        lo = lo_;
        hi = hi_;
      }
      for (auto& v : out.data()) v = static_cast<T>(map(rng_->uniform(lo, hi)));
    } else if (scheme_ == "constant") {
      for (auto& v : out.data()) v = static_cast<T>(constant);
    } else {
      const std::size_t bytes = out.size() * 4;
      if (offset_ + bytes > blob_.size()) throw ConfigError(path_, "blob is too short for this layer");
      out = from_f32_blob<T>(std::span<const std::uint8_t>(blob_).subspan(offset_, bytes), out.shape());
      offset_ += bytes;
    }
    return out;
  }

  std::string path_;
  std::string scheme_;
  std::unique_ptr<Xoshiro256> rng_;
  double lo_ = -1, hi_ = 1, value_ = 0;
  bool explicit_range_ = false;
  std::vector<std::uint8_t> blob_;
  std::size_t offset_ = 0;
};

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

inline ModelConfig config_from_json(const Json& j) {
  detail::Fields f(j, "");
  ModelConfig c;
  c.name = f.text("name");
  const std::string dt = f.text("dtype", "f32");
  if (dt == "f32") {
    c.dtype = DType::kF32;
  } else if (dt == "f64") {
    c.dtype = DType::kF64;
  } else {
    throw ConfigError("dtype", "expected \"f32\" or \"f64\", got \"" + dt + "\"");
  }
  c.input_shape = f.sizes("input_shape");
  for (std::size_t i = 0; i < c.input_shape.size(); ++i) {
    if (c.input_shape[i] == 0) throw ConfigError("input_shape[" + std::to_string(i) + "]", "extent must be >= 1");
  }
  c.layers = f.raw("layers");
  if (!c.layers.is_array() || c.layers.empty()) throw ConfigError("layers", "expected a non-empty array");
  f.finish();
  return c;
}

inline Json config_to_json(const ModelConfig& c) {
  Json j;
  j["name"] = c.name;
  j["dtype"] = to_string(c.dtype);
  j["input_shape"] = c.input_shape;
  j["layers"] = c.layers;
  return j;
}

/// Canonical text form: two-space indentation, keys in document order.
inline std::string dump_config(const ModelConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline ModelConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("$", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ModelConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("$", "cannot open config '" + file.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ModelConfig c = parse_config(ss.str());
  c.base_dir = file.parent_path();
  return c;
}

// ---------------------------------------------------------------------------
// Model building
// ---------------------------------------------------------------------------

template <typename T>
struct BuiltModel {
  std::string name;
  Shape input_frame;
  ModulePtr<T> net;
};

namespace detail {

template <typename T>
struct Built {
  ModulePtr<T> module;
  Shape out_frame;
};

template <typename T>
class Builder {
 public:
  explicit Builder(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

  Built<T> entry(const Json& j, const std::string& path, const Shape& in) {
    Fields f(j, path);
    const std::string type = f.text("type");
    Built<T> b;
    try {
      b = dispatch(type, f, in);
    } catch (const DimensionError& e) {
      throw ConfigError(path, e.what());
    } catch (const ArgumentError& e) {
      throw ConfigError(path, e.what());
    }
    f.finish();
    return b;
  }

  Built<T> sequence(const Json& layers, const std::string& path, const Shape& in) {
    if (!layers.is_array() || layers.empty()) throw ConfigError(path, "expected a non-empty array");
    std::vector<ModulePtr<T>> stages;
    Shape s = in;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Built<T> b = entry(layers[i], path + "[" + std::to_string(i) + "]", s);
      stages.push_back(b.module);
      s = b.out_frame;
    }
    auto seq = std::make_shared<Sequential<T>>(std::move(stages));
    return {seq, s};
  }

 private:
  Initializer init(Fields& f) { return Initializer(f.raw("init"), f.at("init"), base_dir_); }

  static void expect_frame(bool ok, const Fields& f, const std::string& key, const Shape& in,
                           const std::string& want) {
    if (!ok) throw ConfigError(f.at(key), "input frame " + cin::to_string(in) + " does not match " + want);
  }

  Built<T> dispatch(const std::string& type, Fields& f, const Shape& in) {
    if (type == "conv3d") return conv3d(f, in);
    if (type == "avgpool_t" || type == "maxpool_t") return pool(type, f, in);
    if (type == "batchnorm") return batchnorm(f, in);
    if (type == "layernorm") return layernorm(f, in);
    if (type == "relu") return finish_stateless(std::make_shared<ReLU<T>>(), in);
    if (type == "linear") return linear(f, in);
    if (type == "co_encoder_block") return encoder(f, in);
    if (type == "stgcn_block") return stgcn(f, in);
    if (type == "head") return head(f, in);
    if (type == "sequential") return sequence(f.raw("layers"), f.at("layers"), in);
    if (type == "residual") return residual(f, in);
    if (type == "parallel") return parallel(f, in);
    throw ConfigError(f.at("type"), "unknown layer type '" + type + "'");
  }

  static Built<T> finish_stateless(ModulePtr<T> m, const Shape& in) {
    const Shape out = m->out_frame_shape(in);
    return {std::move(m), out};
  }

  Built<T> conv3d(Fields& f, const Shape& in) {
    CoConvParams p;
    p.c_in = f.size("c_in");
    p.c_out = f.size("c_out");
    const auto k = f.sizes("kernel");
    if (k.size() != 3) throw ConfigError(f.at("kernel"), "expected [K_T, K_H, K_W]");
    p.k_t = k[0];
    p.k_h = k[1];
    p.k_w = k[2];
    p.dilation = f.size("dilation", 1);
    p.padding = f.size("padding", 0);
    p.stride = f.size("stride", 1);
    if (f.has("spatial_padding")) {
      const auto sp = f.sizes("spatial_padding");
      if (sp.size() != 2) throw ConfigError(f.at("spatial_padding"), "expected [P_H, P_W]");
      p.spatial_padding = {sp[0], sp[1]};
    }
    const std::string form = f.text("form", "auto");
    if (form == "pre") {
      p.form = CacheForm::kPre;
    } else if (form == "post") {
      p.form = CacheForm::kPost;
    } else if (form == "auto") {
      p.form = CacheForm::kAuto;
    } else {
      throw ConfigError(f.at("form"), "expected \"pre\", \"post\" or \"auto\"");
    }
    expect_frame(in.size() == 3 && in[0] == p.c_in, f, "c_in", in, "[c_in, H, W]");
    Initializer ini = init(f);
    const std::size_t fan_in = p.c_in * p.k_t * p.k_h * p.k_w;
    Tensor<T> w = ini.weight<T>({p.c_out, p.c_in, p.k_t, p.k_h, p.k_w}, fan_in);
    Tensor<T> b = ini.weight<T>({p.c_out}, fan_in);
    ini.finish();
    auto m = std::make_shared<CoConv<T>>(std::make_shared<const CoConvSpec<T>>(p, std::move(w), std::move(b)));
    return finish_stateless(std::move(m), in);
  }

  Built<T> pool(const std::string& type, Fields& f, const Shape& in) {
    CoPoolSpec s;
    s.kind = type == "avgpool_t" ? PoolKind::kAvg : PoolKind::kMax;
    s.window = f.size("window");
    s.padding = s.kind == PoolKind::kAvg ? f.size("padding", 0) : 0;
    s.stride = f.size("stride", 1);
    if (s.kind == PoolKind::kAvg) s.refresh_interval = f.size("refresh_interval", s.refresh_interval);
    return finish_stateless(std::make_shared<CoPool<T>>(s), in);
  }

  Built<T> batchnorm(Fields& f, const Shape& in) {
    const std::size_t c = f.size("channels");
    expect_frame(!in.empty() && in[0] == c, f, "channels", in, "[channels, ...]");
    BatchNormSpec<T> s = bn_params(f, c);
    return finish_stateless(std::make_shared<BatchNorm<T>>(std::move(s)), in);
  }

  BatchNormSpec<T> bn_params(Fields& f, std::size_t c) {
    Initializer ini = init(f);
    BatchNormSpec<T> s;
    s.gamma = ini.gamma<T>({c});
    s.beta = ini.beta<T>({c});
    s.running_mean = ini.beta<T>({c});
    s.running_var = ini.variance<T>({c});
    s.eps = static_cast<T>(f.number("eps", kDefaultNormEps));
    ini.finish();
    return s;
  }

  Built<T> layernorm(Fields& f, const Shape& in) {
    const std::size_t d = f.size("d");
    expect_frame(!in.empty() && in.back() == d, f, "d", in, "[..., d]");
    Initializer ini = init(f);
    LayerNormSpec<T> s{ini.gamma<T>({d}), ini.beta<T>({d}), static_cast<T>(f.number("eps", kDefaultNormEps))};
    ini.finish();
    return finish_stateless(std::make_shared<LayerNorm<T>>(std::move(s)), in);
  }

  Built<T> linear(Fields& f, const Shape& in) {
    const std::size_t c_in = f.size("c_in"), c_out = f.size("c_out");
    expect_frame(!in.empty() && in[0] == c_in, f, "c_in", in, "[c_in, ...]");
    const bool bias = f.flag("bias", true);
    Initializer ini = init(f);
    Tensor<T> w = ini.weight<T>({c_out, c_in}, c_in);
    Tensor<T> b = bias ? ini.weight<T>({c_out}, c_in) : Tensor<T>();
    ini.finish();
    return finish_stateless(std::make_shared<Linear<T>>(std::move(w), std::move(b)), in);
  }

  Built<T> encoder(Fields& f, const Shape& in) {
    const std::string mode = f.text("mode");
    if (mode != "single" && mode != "retro") throw ConfigError(f.at("mode"), "expected \"single\" or \"retro\"");
    auto spec = std::make_shared<EncoderBlockSpec<T>>();
    spec->mode = mode == "retro" ? AttnMode::kRetro : AttnMode::kSingle;
    const std::size_t n = f.size("n"), d = f.size("d_model"), heads = f.size("heads", 1);
    const std::size_t ff = f.size("ff_dim");
    const bool window_input = in.size() == 2;
    expect_frame((in.size() == 1 && in[0] == d) || (window_input && in[0] == n && in[1] == d), f, "d_model", in,
                 "[d_model] or [n, d_model]");
    if (window_input && spec->mode == AttnMode::kRetro) {
      throw ConfigError(f.at("mode"), "a window input [n, d_model] needs mode \"single\"");
    }
    const std::size_t period = f.size("rpe_period", window_input ? 0 : n);
    if (window_input && period != 0) {
      throw ConfigError(f.at("rpe_period"), "positional encoding is not supported on window inputs");
    }
    auto& a = spec->attn;
    a.n = n;
    a.d_model = d;
    a.heads = heads;
    a.options.refresh_interval = f.size("refresh_interval", a.options.refresh_interval);
    if (heads == 0 || d % heads != 0) throw ConfigError(f.at("heads"), "d_model must be divisible by heads");
    if (n == 0) throw ConfigError(f.at("n"), "window must be >= 1");
    if (ff == 0) throw ConfigError(f.at("ff_dim"), "must be >= 1");
    Initializer ini = init(f);
    a.w_q = ini.weight<T>({d, d}, d);
    a.w_k = ini.weight<T>({d, d}, d);
    a.w_v = ini.weight<T>({d, d}, d);
    a.w_o = ini.weight<T>({d, d}, d);
    spec->ln1 = {ini.gamma<T>({d}), ini.beta<T>({d})};
    spec->w1 = ini.weight<T>({d, ff}, d);
    spec->b1 = ini.weight<T>({ff}, d);
    spec->w2 = ini.weight<T>({ff, d}, ff);
    spec->b2 = ini.weight<T>({d}, ff);
    spec->ln2 = {ini.gamma<T>({d}), ini.beta<T>({d})};
    if (period > 0) spec->rpe = std::make_shared<const Tensor<T>>(ini.weight<T>({period, d}, d));
    ini.finish();
    if (window_input) return finish_stateless(std::make_shared<WindowEncoderBlock<T>>(spec), in);
    return finish_stateless(std::make_shared<CoEncoderBlock<T>>(spec), in);
  }

  Built<T> stgcn(Fields& f, const Shape& in) {
    const std::size_t v = f.size("v"), c_in = f.size("c_in"), c_out = f.size("c_out");
    const std::size_t parts = f.size("partitions", 3);
    expect_frame(in == Shape{c_in, v}, f, "c_in", in, "[c_in, v]");
    std::vector<Edge> edges;
    std::size_t center = 0;
    if (f.has("edges")) {
      const Json& e = f.raw("edges");
      if (!e.is_array()) throw ConfigError(f.at("edges"), "expected an array of [i, j] pairs");
      for (std::size_t i = 0; i < e.size(); ++i) {
        const std::string p = f.at("edges") + "[" + std::to_string(i) + "]";
        if (!e[i].is_array() || e[i].size() != 2) throw ConfigError(p, "expected [i, j]");
        edges.emplace_back(Fields::as_size(e[i][0], p), Fields::as_size(e[i][1], p));
      }
      center = f.size("center", 0);
    } else if (v == 25) {
      edges = ntu_rgbd_edges();
      center = f.size("center", kNtuCenter);
    } else {
      edges = chain_edges(v);
      center = f.size("center", 0);
    }
    if (parts != 1 && parts != 3) throw ConfigError(f.at("partitions"), "expected 1 or 3");
    if (center >= v) throw ConfigError(f.at("center"), "node index out of range");
    SkeletonGraph<T> graph = SkeletonGraph<T>::from_edges(v, edges, parts, center);

    CoConvParams tp;
    tp.c_in = tp.c_out = c_out;
    tp.k_t = f.size("tc_kernel", 9);
    tp.stride = f.size("tc_stride", 1);
    tp.dilation = f.size("tc_dilation", 1);
    tp.padding = f.size("tc_padding", 0);
    const std::string res = f.text("residual", "auto");
    ResidualKind rk;
    if (res == "auto") {
      rk = c_in == c_out ? ResidualKind::kIdentity : ResidualKind::kPointwise;
    } else if (res == "none") {
      rk = ResidualKind::kNone;
    } else if (res == "identity") {
      rk = ResidualKind::kIdentity;
    } else if (res == "pointwise") {
      rk = ResidualKind::kPointwise;
    } else {
      throw ConfigError(f.at("residual"), "expected auto, none, identity or pointwise");
    }

    Initializer ini = init(f);
    std::vector<Tensor<T>> w_gc;
    for (std::size_t p = 0; p < parts; ++p) w_gc.push_back(ini.weight<T>({c_in, c_out}, c_in * parts));
    const std::size_t fan_tc = c_out * tp.k_t;
    Tensor<T> w_tc = ini.weight<T>({c_out, c_out, tp.k_t, 1, 1}, fan_tc);
    Tensor<T> b_tc = ini.weight<T>({c_out}, fan_tc);
    BatchNormSpec<T> bn;
    bn.gamma = ini.gamma<T>({c_out});
    bn.beta = ini.beta<T>({c_out});
    bn.running_mean = ini.beta<T>({c_out});
    bn.running_var = ini.variance<T>({c_out});
    Tensor<T> w_res = rk == ResidualKind::kPointwise ? ini.weight<T>({c_in, c_out}, c_in) : Tensor<T>();
    ini.finish();
    CoConvSpec<T> tc(tp, std::move(w_tc), std::move(b_tc));
    const std::size_t rd = cin::delay(tc);
    auto spec = std::make_shared<const StGcnBlockSpec<T>>(std::move(graph), std::move(w_gc), std::move(tc),
                                                          std::move(bn), rk, std::move(w_res), rd);
    return finish_stateless(std::make_shared<StGcnBlock<T>>(spec), in);
  }

  /// Spatial mean, running temporal average and linear classifier.
  Built<T> head(Fields& f, const Shape& in) {
    if (in.empty()) throw ConfigError(f.path(), "head needs a channel axis");
    const std::size_t c = in[0];
    CoPoolSpec ps;
    ps.window = f.size("pool_window");
    const std::size_t classes = f.size("classes");
    Initializer ini = init(f);
    Tensor<T> w = ini.weight<T>({classes, c}, c);
    Tensor<T> b = ini.weight<T>({classes}, c);
    ini.finish();
    std::vector<ModulePtr<T>> stages{std::make_shared<SpatialMean<T>>(), std::make_shared<CoPool<T>>(ps),
                                     std::make_shared<Linear<T>>(std::move(w), std::move(b))};
    return finish_stateless(std::make_shared<Sequential<T>>(std::move(stages), "head"), in);
  }

  Built<T> residual(Fields& f, const Shape& in) {
    Built<T> inner = entry(f.raw("inner"), f.at("inner"), in);
    const std::string sc = f.text("shortcut", "identity");
    ModulePtr<T> shortcut;
    if (sc == "identity") {
      shortcut = std::make_shared<Identity<T>>();
    } else if (sc == "pointwise") {
      if (in.empty() || inner.out_frame.empty()) throw ConfigError(f.at("shortcut"), "needs channel axes");
      Initializer ini = init(f);
      Tensor<T> w = ini.weight<T>({inner.out_frame[0], in[0]}, in[0]);
      ini.finish();
      shortcut = std::make_shared<Linear<T>>(std::move(w), Tensor<T>());
    } else {
      throw ConfigError(f.at("shortcut"), "expected \"identity\" or \"pointwise\"");
    }
    return finish_stateless(std::make_shared<Residual<T>>(inner.module, shortcut), in);
  }

  Built<T> parallel(Fields& f, const Shape& in) {
    const Json& bs = f.raw("branches");
    if (!bs.is_array() || bs.empty()) throw ConfigError(f.at("branches"), "expected a non-empty array");
    std::vector<ModulePtr<T>> branches;
    for (std::size_t i = 0; i < bs.size(); ++i) {
      branches.push_back(entry(bs[i], f.at("branches") + "[" + std::to_string(i) + "]", in).module);
    }
    const std::string r = f.text("reduce", "sum");
    if (r != "sum" && r != "concat") throw ConfigError(f.at("reduce"), "expected \"sum\" or \"concat\"");
    return finish_stateless(
        std::make_shared<Parallel<T>>(std::move(branches), r == "sum" ? Reduce::kSum : Reduce::kConcat), in);
  }

  std::filesystem::path base_dir_;
};

}  // namespace detail

/// Builds the layer list as one Sequential. Identical configs produce
/// bit-identical weights.
template <typename T>
BuiltModel<T> build_model(const ModelConfig& c) {
  detail::Builder<T> b(c.base_dir);
  auto built = b.sequence(c.layers, "layers", c.input_shape);
  return {c.name, c.input_shape, built.module};
}

}  // namespace cin::bench
