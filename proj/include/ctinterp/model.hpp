// SPDX-License-Identifier: Apache-2.0
//
// Generator (encoder + pyramid decoder) and the two critics.
//
// Encoder trunk: blocks of [3x3 conv s1, lrelu, 3x3 conv s2, lrelu]. The
// first four blocks take the input to S/16; two more reach S/32 and S/64.
// 1x1 heads project the trunk at those three resolutions to the latent
// pyramid. The decoder climbs back up from the deepest level, upsampling
// 2x (nearest) and concatenating the matching pyramid level before each
// conv.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctinterp/image.hpp"
#include "ctinterp/layers.hpp"
#include "ctinterp/optimizer.hpp"
#include "ctinterp/random.hpp"
#include "ctinterp/tensor.hpp"

namespace ctinterp {

/// Downsampling factor of each pyramid level relative to the input.
inline constexpr int kPyramidFactors[] = {16, 32, 64};
inline constexpr int kMaxPyramidLevels = 3;
inline constexpr int kBlocksToFirstLevel = 4;

/// Stability clamp applied to patch probabilities before any logarithm.
inline constexpr double kProbEpsilon = 1e-7;

/// The interpolation coefficient weights the FIRST endpoint:
/// z = alpha * z1 + (1 - alpha) * z2. Every module goes through
/// mix_weight_first() so there is exactly one place this is decided.
inline constexpr double mix_weight_first(double alpha) { return alpha; }

enum class InitScheme { Normal, FanIn };

inline const char* to_string(InitScheme s) { return s == InitScheme::Normal ? "normal" : "fan_in"; }

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "normal") return InitScheme::Normal;
  if (s == "fan_in") return InitScheme::FanIn;
  throw std::invalid_argument("unknown init scheme '" + s + "' (expected normal or fan_in)");
}

struct ModelConfig {
  int input_size = 64;
  /// Output channels of each trunk block; empty selects 16,32,64,64,64,64.
  std::vector<int> trunk_channels;
  /// Channels of each pyramid head; empty selects the size-dependent default.
  std::vector<int> pyramid_channels;
  /// Width of the first patch-critic layer; 0 selects 64 (>=256) or 8.
  int d2_base_channels = 0;
  /// Stride-2 layers in the patch critic; 0 selects 3 (or 2 below 32 px).
  int d2_downsamples = 0;
  /// Kernel init: Normal draws N(0, init_std); FanIn scales by each conv's
  /// fan-in so activations keep unit variance through the leaky ReLUs.
  InitScheme init = InitScheme::Normal;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Number of pyramid levels realized for an input size. Levels whose
/// spatial extent would drop below one pixel are omitted.
inline int pyramid_level_count(int input_size) {
  int levels = 0;
  for (int f : kPyramidFactors)
    if (input_size % f == 0 && input_size / f >= 1) ++levels;
    else break;
  return levels;
}

/// Fills every defaulted field and validates the result.
inline ModelConfig resolve(ModelConfig cfg) {
  if (cfg.input_size < kPyramidFactors[0] || cfg.input_size % kPyramidFactors[0] != 0)
    throw ShapeError("input_size must be a positive multiple of 16, got " + std::to_string(cfg.input_size));
  const int levels = pyramid_level_count(cfg.input_size);
  const int blocks = kBlocksToFirstLevel + levels - 1;
  if (cfg.trunk_channels.empty()) {
    const int plan[] = {16, 32, 64, 64, 64, 64};
    cfg.trunk_channels.assign(plan, plan + blocks);
  }
  if (static_cast<int>(cfg.trunk_channels.size()) != blocks)
    throw ShapeError("trunk_channels needs " + std::to_string(blocks) + " entries for input size " +
                     std::to_string(cfg.input_size));
  if (cfg.pyramid_channels.empty()) {
    if (cfg.input_size >= 512) cfg.pyramid_channels = {16, 8, 4};
    else cfg.pyramid_channels = {16, 8, 8};
  }
  if (static_cast<int>(cfg.pyramid_channels.size()) < levels)
    throw ShapeError("pyramid_channels has fewer entries than pyramid levels");
  cfg.pyramid_channels.resize(levels);
  if (cfg.d2_base_channels == 0) cfg.d2_base_channels = cfg.input_size >= 256 ? 64 : 8;
  if (cfg.d2_downsamples == 0) cfg.d2_downsamples = cfg.input_size >= 32 ? 3 : 2;
  for (int c : cfg.trunk_channels)
    if (c <= 0) throw ShapeError("trunk channel counts must be positive");
  for (int c : cfg.pyramid_channels)
    if (c <= 0) throw ShapeError("pyramid channel counts must be positive");
  if (cfg.d2_base_channels <= 0 || cfg.d2_downsamples <= 0) throw ShapeError("invalid patch critic layout");
  if (!(cfg.init_std > 0.0)) throw RangeError("init_std must be positive");
  return cfg;
}

/// Per-sample shapes of the latent pyramid, shallowest first.
inline std::vector<MapShape> pyramid_shapes(const ModelConfig& raw) {
  const ModelConfig cfg = resolve(raw);
  std::vector<MapShape> shapes;
  for (std::size_t l = 0; l < cfg.pyramid_channels.size(); ++l) {
    const int side = cfg.input_size / kPyramidFactors[l];
    shapes.push_back({cfg.pyramid_channels[l], side, side});
  }
  return shapes;
}

/// Batched latent pyramid; levels[l] is (N, c_l, h_l, w_l).
template <typename T>
struct LatentPyramid {
  std::vector<Tensor<T>> levels;

  int batch() const { return levels.empty() ? 0 : levels.front().n(); }
  std::vector<MapShape> shapes() const {
    std::vector<MapShape> s;
    for (const auto& t : levels) s.push_back(t.sample_shape());
    return s;
  }
  friend bool operator==(const LatentPyramid&, const LatentPyramid&) = default;
};

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  if (acc.empty()) {
    acc = v;
    return;
  }
  require_same_shape(acc, v, "add_into");
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += v.data()[i];
}

/// Elementwise alpha * p1 + (1 - alpha) * p2 at every level.
template <typename T>
LatentPyramid<T> interpolate_pyramid(const LatentPyramid<T>& p1, const LatentPyramid<T>& p2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("alpha must lie in [0, 1]");
  if (p1.levels.size() != p2.levels.size()) throw ShapeError("interpolate_pyramid: level count mismatch");
  const T a = static_cast<T>(mix_weight_first(alpha));
  const T b = static_cast<T>(1.0 - mix_weight_first(alpha));
  LatentPyramid<T> out;
  for (std::size_t l = 0; l < p1.levels.size(); ++l) {
    require_same_shape(p1.levels[l], p2.levels[l], "interpolate_pyramid");
    Tensor<T> t = p1.levels[l];
    const T* q = p2.levels[l].data();
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = a * t.data()[i] + b * q[i];
    out.levels.push_back(std::move(t));
  }
  return out;
}

/// Per-sample coefficients: sample i uses alphas[i].
template <typename T>
LatentPyramid<T> interpolate_pyramid(const LatentPyramid<T>& p1, const LatentPyramid<T>& p2,
                                     std::span<const double> alphas) {
  if (p1.levels.size() != p2.levels.size()) throw ShapeError("interpolate_pyramid: level count mismatch");
  if (static_cast<int>(alphas.size()) != p1.batch()) throw ShapeError("interpolate_pyramid: one alpha per sample");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw RangeError("alpha must lie in [0, 1]");
  LatentPyramid<T> out;
  for (std::size_t l = 0; l < p1.levels.size(); ++l) {
    require_same_shape(p1.levels[l], p2.levels[l], "interpolate_pyramid");
    Tensor<T> t = p1.levels[l];
    const std::size_t per = t.sample_size();
    for (int s = 0; s < t.n(); ++s) {
      const T a = static_cast<T>(mix_weight_first(alphas[s]));
      const T b = static_cast<T>(1.0 - mix_weight_first(alphas[s]));
      T* d = t.sample(s);
      const T* q = p2.levels[l].sample(s);
      for (std::size_t i = 0; i < per; ++i) d[i] = a * d[i] + b * q[i];
    }
    out.levels.push_back(std::move(t));
  }
  return out;
}

/// Stack of [conv, lrelu] layers with every activation kept for backward.
class ConvStack {
 public:
  template <typename T>
  using Acts = std::vector<Tensor<T>>;

  ConvStack() = default;
  explicit ConvStack(std::vector<ConvSpec> convs) : convs_(std::move(convs)) {}

  const std::vector<ConvSpec>& convs() const { return convs_; }

  /// acts[0] = x, acts[i + 1] = lrelu(conv_i(acts[i])).
  template <typename T>
  Acts<T> forward(std::span<const T> params, const Tensor<T>& x) const {
    Acts<T> acts;
    acts.reserve(convs_.size() + 1);
    acts.push_back(x);
    for (const auto& c : convs_) acts.push_back(leaky_relu(conv2d_forward(c, params, acts.back())));
    return acts;
  }

  /// `act_grads[i]` (possibly empty) is the upstream gradient on acts[i].
  /// Returns the gradient on acts[0] when `need_input_grad`.
  template <typename T>
  Tensor<T> backward(std::span<const T> params, const Acts<T>& acts, const std::vector<Tensor<T>>& act_grads,
                     std::span<T> grads, bool need_input_grad) const {
    Tensor<T> g = act_grads.back();
    if (g.empty()) g = Tensor<T>(acts.back().n(), acts.back().sample_shape());
    for (std::size_t i = convs_.size(); i-- > 0;) {
      const Tensor<T> pre = leaky_relu_backward(acts[i + 1], std::move(g));
      Tensor<T> dx;
      const bool want = i > 0 || need_input_grad;
      conv2d_backward(convs_[i], params, acts[i], pre, grads, want ? &dx : nullptr);
      if (!want) return {};
      g = std::move(dx);
      if (!act_grads[i].empty()) add_into(g, act_grads[i]);
    }
    return g;
  }

 private:
  std::vector<ConvSpec> convs_;
};

inline std::vector<ConvSpec> build_trunk(std::size_t& cursor, const std::vector<int>& channels) {
  std::vector<ConvSpec> convs;
  int cin = 1;
  for (int c : channels) {
    convs.push_back(add_conv(cursor, cin, c, 3, 1, 1));
    convs.push_back(add_conv(cursor, c, c, 3, 2, 1));
    cin = c;
  }
  return convs;
}

class EncoderNet {
 public:
  template <typename T>
  struct Trace {
    ConvStack::Acts<T> acts;
  };

  EncoderNet() = default;
  explicit EncoderNet(const ModelConfig& cfg) : input_size_(cfg.input_size) {
    std::size_t cursor = 0;
    trunk_ = ConvStack(build_trunk(cursor, cfg.trunk_channels));
    for (std::size_t l = 0; l < cfg.pyramid_channels.size(); ++l) {
      const int block = kBlocksToFirstLevel - 1 + static_cast<int>(l);
      head_act_.push_back(2 * (block + 1));
      heads_.push_back(add_conv(cursor, cfg.trunk_channels[block], cfg.pyramid_channels[l], 1, 1, 0));
    }
    count_ = cursor;
  }

  std::size_t param_count() const { return count_; }
  std::vector<ConvSpec> convs() const {
    auto all = trunk_.convs();
    all.insert(all.end(), heads_.begin(), heads_.end());
    return all;
  }

  template <typename T>
  LatentPyramid<T> forward(std::span<const T> params, const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    check_input(x);
    auto acts = trunk_.forward(params, x);
    LatentPyramid<T> out;
    for (std::size_t l = 0; l < heads_.size(); ++l)
      out.levels.push_back(conv2d_forward(heads_[l], params, acts[head_act_[l]]));
    if (trace != nullptr) trace->acts = std::move(acts);
    return out;
  }

  template <typename T>
  Tensor<T> backward(std::span<const T> params, const Trace<T>& trace, const LatentPyramid<T>& grad,
                     std::span<T> grads, bool need_input_grad) const {
    std::vector<Tensor<T>> act_grads(trace.acts.size());
    for (std::size_t l = 0; l < heads_.size(); ++l) {
      if (grad.levels[l].empty()) continue;
      Tensor<T> d;
      conv2d_backward(heads_[l], params, trace.acts[head_act_[l]], grad.levels[l], grads, &d);
      add_into(act_grads[head_act_[l]], d);
    }
    return trunk_.backward(params, trace.acts, act_grads, grads, need_input_grad);
  }

 private:
  template <typename T>
  void check_input(const Tensor<T>& x) const {
    if (x.c() != 1 || x.h() != input_size_ || x.w() != input_size_)
      throw ShapeError("encoder expects 1x" + std::to_string(input_size_) + "x" + std::to_string(input_size_) +
                       " input, got " + x.shape_str());
  }

  int input_size_ = 0;
  ConvStack trunk_;
  std::vector<ConvSpec> heads_;
  std::vector<int> head_act_;
  std::size_t count_ = 0;
};

class DecoderNet {
 public:
  template <typename T>
  struct Trace {
    std::vector<Tensor<T>> conv_inputs;
    std::vector<Tensor<T>> acts;
    Tensor<T> output;
  };

  DecoderNet() = default;
  explicit DecoderNet(const ModelConfig& cfg) : shapes_(pyramid_shapes(cfg)) {
    std::size_t cursor = 0;
    const int levels = static_cast<int>(shapes_.size());
    const int deepest_res = kBlocksToFirstLevel + levels - 1;  // log2(S / deepest side)
    int prev = shapes_.back().channels;
    for (int j = deepest_res - 1; j >= 0; --j) {
      Step step;
      const int l = j - kBlocksToFirstLevel;
      step.level = (l >= 0 && l < levels) ? l : -1;
      step.prev_channels = prev;
      const int cin = prev + (step.level >= 0 ? shapes_[step.level].channels : 0);
      const int cout = cfg.trunk_channels[j > 0 ? j - 1 : 0];
      step.conv = add_conv(cursor, cin, cout, 3, 1, 1);
      steps_.push_back(step);
      prev = cout;
    }
    final_ = add_conv(cursor, prev, 1, 3, 1, 1);
    count_ = cursor;
  }

  std::size_t param_count() const { return count_; }
  std::vector<ConvSpec> convs() const {
    std::vector<ConvSpec> all;
    for (const Step& s : steps_) all.push_back(s.conv);
    all.push_back(final_);
    return all;
  }

  template <typename T>
  Tensor<T> forward(std::span<const T> params, const LatentPyramid<T>& p, Trace<T>* trace = nullptr) const {
    check(p);
    Tensor<T> h = p.levels.back();
    std::vector<Tensor<T>> inputs, acts;
    for (const Step& s : steps_) {
      Tensor<T> in = upsample2x(h);
      if (s.level >= 0) in = concat_channels(in, p.levels[s.level]);
      h = leaky_relu(conv2d_forward(s.conv, params, in));
      if (trace != nullptr) {
        inputs.push_back(std::move(in));
        acts.push_back(h);
      }
    }
    Tensor<T> out = sigmoid(conv2d_forward(final_, params, h));
    if (trace != nullptr) {
      trace->conv_inputs = std::move(inputs);
      trace->acts = std::move(acts);
      trace->output = out;
    }
    return out;
  }

  /// Returns the gradient on every pyramid level.
  template <typename T>
  LatentPyramid<T> backward(std::span<const T> params, const Trace<T>& trace, const Tensor<T>& dout,
                            std::span<T> grads) const {
    LatentPyramid<T> dp;
    dp.levels.resize(shapes_.size());
    Tensor<T> g = sigmoid_backward(trace.output, dout);
    Tensor<T> dh;
    conv2d_backward(final_, params, trace.acts.back(), g, grads, &dh);
    for (std::size_t k = steps_.size(); k-- > 0;) {
      const Step& s = steps_[k];
      const Tensor<T> pre = leaky_relu_backward(trace.acts[k], std::move(dh));
      Tensor<T> din;
      conv2d_backward(s.conv, params, trace.conv_inputs[k], pre, grads, &din);
      Tensor<T> dup;
      if (s.level >= 0) {
        Tensor<T> dlevel;
        split_channels(din, s.prev_channels, dup, dlevel);
        add_into(dp.levels[s.level], dlevel);
      } else {
        dup = std::move(din);
      }
      dh = upsample2x_backward(dup);
    }
    add_into(dp.levels.back(), dh);
    return dp;
  }

 private:
  struct Step {
    ConvSpec conv;
    int level = -1;
    int prev_channels = 0;
  };

  template <typename T>
  void check(const LatentPyramid<T>& p) const {
    if (p.levels.size() != shapes_.size()) throw ShapeError("decoder: pyramid level count mismatch");
    for (std::size_t l = 0; l < shapes_.size(); ++l)
      if (p.levels[l].sample_shape() != shapes_[l])
        throw ShapeError("decoder: level " + std::to_string(l) + " has shape " +
                         p.levels[l].sample_shape().str() + ", expected " + shapes_[l].str());
  }

  std::vector<MapShape> shapes_;
  std::vector<Step> steps_;
  ConvSpec final_;
  std::size_t count_ = 0;
};

/// Interpolation critic: encoder-trunk clone, global mean, affine scalar.
class CriticNet {
 public:
  template <typename T>
  struct Trace {
    ConvStack::Acts<T> acts;
  };

  CriticNet() = default;
  explicit CriticNet(const ModelConfig& cfg) : input_size_(cfg.input_size) {
    std::size_t cursor = 0;
    trunk_ = ConvStack(build_trunk(cursor, cfg.trunk_channels));
    head_ = add_conv(cursor, cfg.trunk_channels.back(), 1, 1, 1, 0);
    count_ = cursor;
  }

  std::size_t param_count() const { return count_; }
  std::vector<ConvSpec> convs() const {
    auto all = trunk_.convs();
    all.push_back(head_);
    return all;
  }

  template <typename T>
  std::vector<T> forward(std::span<const T> params, const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    if (x.c() != 1 || x.h() != input_size_ || x.w() != input_size_)
      throw ShapeError("critic input has shape " + x.shape_str());
    auto acts = trunk_.forward(params, x);
    const Tensor<T> y = conv2d_forward(head_, params, global_mean(acts.back()));
    if (trace != nullptr) trace->acts = std::move(acts);
    return y.storage();
  }

  template <typename T>
  Tensor<T> backward(std::span<const T> params, const Trace<T>& trace, std::span<const T> dout, std::span<T> grads,
                     bool need_input_grad) const {
    const Tensor<T>& last = trace.acts.back();
    Tensor<T> dy(static_cast<int>(dout.size()), 1, 1, 1);
    std::copy(dout.begin(), dout.end(), dy.data());
    Tensor<T> dpool;
    conv2d_backward(head_, params, global_mean(last), dy, grads, &dpool);
    std::vector<Tensor<T>> act_grads(trace.acts.size());
    act_grads.back() = global_mean_backward(dpool, last.h(), last.w());
    return trunk_.backward(params, trace.acts, act_grads, grads, need_input_grad);
  }

 private:
  int input_size_ = 0;
  ConvStack trunk_;
  ConvSpec head_;
  std::size_t count_ = 0;
};

/// Markovian (patch) critic with 4x4 kernels: stride-2 layers of width
/// base * 2^i, a stride-1 layer, then a 1-channel stride-1 projection,
/// logistic squash, and the stability clamp. At 256 px this is the
/// 70x70-receptive-field layout with a 30x30 output grid.
class PatchCriticNet {
 public:
  template <typename T>
  struct Trace {
    ConvStack::Acts<T> acts;
    Tensor<T> squashed;  // before clamping
  };

  PatchCriticNet() = default;
  explicit PatchCriticNet(const ModelConfig& cfg) : input_size_(cfg.input_size) {
    std::size_t cursor = 0;
    std::vector<ConvSpec> convs;
    int cin = 1, width = cfg.d2_base_channels;
    for (int i = 0; i < cfg.d2_downsamples; ++i) {
      convs.push_back(add_conv(cursor, cin, width, 4, 2, 1));
      cin = width;
      width *= 2;
    }
    convs.push_back(add_conv(cursor, cin, width, 4, 1, 1));
    stack_ = ConvStack(std::move(convs));
    out_ = add_conv(cursor, width, 1, 4, 1, 1);
    count_ = cursor;
    grid_ = input_size_;
    for (const auto& c : stack_.convs()) grid_ = c.out_extent(grid_);
    grid_ = out_.out_extent(grid_);
    if (grid_ < 1) throw ShapeError("patch critic: input size too small for layer stack");
  }

  std::size_t param_count() const { return count_; }
  std::vector<ConvSpec> convs() const {
    auto all = stack_.convs();
    all.push_back(out_);
    return all;
  }
  /// Side length of the patch grid.
  int grid_size() const { return grid_; }

  template <typename T>
  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    if (x.c() != 1 || x.h() != input_size_ || x.w() != input_size_)
      throw ShapeError("patch critic input has shape " + x.shape_str());
    auto acts = stack_.forward(params, x);
    Tensor<T> s = sigmoid(conv2d_forward(out_, params, acts.back()));
    Tensor<T> p = s;
    const T lo = static_cast<T>(kProbEpsilon), hi = static_cast<T>(1.0 - kProbEpsilon);
    for (T& v : p.storage()) v = std::clamp(v, lo, hi);
    if (trace != nullptr) {
      trace->acts = std::move(acts);
      trace->squashed = std::move(s);
    }
    return p;
  }

  template <typename T>
  Tensor<T> backward(std::span<const T> params, const Trace<T>& trace, const Tensor<T>& dprob, std::span<T> grads,
                     bool need_input_grad) const {
    Tensor<T> g = dprob;
    const T lo = static_cast<T>(kProbEpsilon), hi = static_cast<T>(1.0 - kProbEpsilon);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = trace.squashed.data()[i];
      if (s < lo || s > hi) g.data()[i] = T(0);
    }
    g = sigmoid_backward(trace.squashed, std::move(g));
    std::vector<Tensor<T>> act_grads(trace.acts.size());
    conv2d_backward(out_, params, trace.acts.back(), g, grads, &act_grads.back());
    return stack_.backward(params, trace.acts, act_grads, grads, need_input_grad);
  }

 private:
  int input_size_ = 0;
  ConvStack stack_;
  ConvSpec out_;
  int grid_ = 0;
  std::size_t count_ = 0;
};

/// All layer layouts; a pure function of the resolved ModelConfig.
struct Architecture {
  ModelConfig config;
  EncoderNet encoder;
  DecoderNet decoder;
  CriticNet d1;
  PatchCriticNet d2;

  Architecture() = default;
  explicit Architecture(const ModelConfig& raw)
      : config(resolve(raw)), encoder(config), decoder(config), d1(config), d2(config) {}
};

enum class Stage : std::uint8_t { I = 1, II = 2 };

template <typename T>
struct ModelState {
  Architecture arch;
  std::vector<T> encoder;
  std::vector<T> decoder;
  std::vector<T> d1;
  std::vector<T> d2;
  /// Frozen encoder snapshot taken when Stage I completes.
  std::vector<T> perceptual;
  bool has_perceptual = false;
  AdamState<T> encoder_opt, decoder_opt, d1_opt, d2_opt;
  std::int64_t iteration = 0;
  /// Value of `iteration` when Stage II began.
  std::int64_t stage2_start = 0;
  Stage stage = Stage::I;
  Rng rng;

  const ModelConfig& config() const { return arch.config; }
  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.arch.config == b.arch.config && a.encoder == b.encoder && a.decoder == b.decoder && a.d1 == b.d1 &&
           a.d2 == b.d2 && a.has_perceptual == b.has_perceptual && a.perceptual == b.perceptual &&
           a.encoder_opt == b.encoder_opt && a.decoder_opt == b.decoder_opt && a.d1_opt == b.d1_opt &&
           a.d2_opt == b.d2_opt && a.iteration == b.iteration && a.stage2_start == b.stage2_start &&
           a.stage == b.stage && a.rng == b.rng;
  }
};

namespace detail {

template <typename T>
void init_convs(std::vector<T>& params, const std::vector<ConvSpec>& convs, const ModelConfig& cfg, Rng& rng) {
  for (const auto& c : convs) {
    double sd = cfg.init_std;
    if (cfg.init == InitScheme::FanIn)
      sd = std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(c.patch_size())));
    for (std::size_t i = 0; i < c.weight_count(); ++i) params[c.weight_offset + i] = static_cast<T>(sd * rng.normal());
  }
}

}  // namespace detail

/// Freshly initialized state: conv kernels per cfg.init, biases zero.
template <typename T>
ModelState<T> make_state(const ModelConfig& cfg) {
  ModelState<T> s;
  s.arch = Architecture(cfg);
  Rng init(s.arch.config.seed);
  auto fill = [&](std::vector<T>& p, std::size_t n, const std::vector<ConvSpec>& convs) {
    p.assign(n, T(0));
    detail::init_convs(p, convs, s.arch.config, init);
  };
  fill(s.encoder, s.arch.encoder.param_count(), s.arch.encoder.convs());
  fill(s.decoder, s.arch.decoder.param_count(), s.arch.decoder.convs());
  fill(s.d1, s.arch.d1.param_count(), s.arch.d1.convs());
  fill(s.d2, s.arch.d2.param_count(), s.arch.d2.convs());
  s.rng = Rng(s.arch.config.seed ^ 0x9E3779B97F4A7C15ull);
  return s;
}

template <typename T>
LatentPyramid<T> encode(const ModelState<T>& s, const Tensor<T>& x) {
  return s.arch.encoder.forward(std::span<const T>(s.encoder), x);
}

template <typename T>
Tensor<T> decode(const ModelState<T>& s, const LatentPyramid<T>& p) {
  return s.arch.decoder.forward(std::span<const T>(s.decoder), p);
}

/// decode(interpolate(encode(x1), encode(x2), alpha)); one alpha per sample.
template <typename T>
Tensor<T> generate_interpolation(const ModelState<T>& s, const Tensor<T>& x1, const Tensor<T>& x2,
                                 std::span<const double> alphas) {
  require_same_shape(x1, x2, "generate_interpolation");
  return decode(s, interpolate_pyramid(encode(s, x1), encode(s, x2), alphas));
}

template <typename T>
Tensor<T> generate_interpolation(const ModelState<T>& s, const Tensor<T>& x1, const Tensor<T>& x2, double alpha) {
  require_same_shape(x1, x2, "generate_interpolation");
  return decode(s, interpolate_pyramid(encode(s, x1), encode(s, x2), alpha));
}

/// Interpolation-coefficient estimate per sample (unbounded).
template <typename T>
std::vector<T> d1_predict(const ModelState<T>& s, const Tensor<T>& x) {
  return s.arch.d1.forward(std::span<const T>(s.d1), x);
}

/// Per-patch realness probabilities, (N, 1, g, g), clamped to [eps, 1-eps].
template <typename T>
Tensor<T> d2_patch_logits(const ModelState<T>& s, const Tensor<T>& x) {
  return s.arch.d2.forward(std::span<const T>(s.d2), x);
}

// Single-image conveniences for float states.

inline Image reconstruct(const ModelState<float>& s, const Image& x) {
  return from_batch(decode(s, encode(s, to_batch<float>(x))), 0);
}

inline Image generate_interpolation(const ModelState<float>& s, const Image& x1, const Image& x2, double alpha) {
  return from_batch(generate_interpolation(s, to_batch<float>(x1), to_batch<float>(x2), alpha), 0);
}

inline float d1_predict(const ModelState<float>& s, const Image& x) {
  return d1_predict(s, to_batch<float>(x)).front();
}

/// One output per alpha between two single images; each endpoint is
/// encoded once and all interpolants are decoded as one batch.
inline std::vector<Image> interpolate_between(const ModelState<float>& s, const Image& a, const Image& b,
                                              std::span<const double> alphas) {
  require_same_shape(a, b, "interpolate_between");
  if (alphas.empty()) return {};
  const auto pa = encode(s, to_batch<float>(a));
  const auto pb = encode(s, to_batch<float>(b));
  const int k = static_cast<int>(alphas.size());
  auto repeat = [k](const LatentPyramid<float>& p) {
    LatentPyramid<float> out;
    for (const auto& lvl : p.levels) {
      Tensor<float> t(k, lvl.c(), lvl.h(), lvl.w());
      for (int i = 0; i < k; ++i) std::copy_n(lvl.data(), lvl.size(), t.data() + i * lvl.size());
      out.levels.push_back(std::move(t));
    }
    return out;
  };
  return from_batch(decode(s, interpolate_pyramid(repeat(pa), repeat(pb), alphas)));
}

}  // namespace ctinterp
