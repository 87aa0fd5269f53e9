// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ctinterp/model.hpp"
#include "ctinterp/random.hpp"
#include "ctinterp/tensor.hpp"

namespace ctinterp::testing {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(n, c, h, w);
  for (T& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline Image random_image(int size, Rng& rng) {
  Image im(size, size);
  for (float& v : im.pixels) v = static_cast<float>(rng.uniform());
  return im;
}

/// 16 px input, at most 4 channels per layer, one pyramid level.
inline ModelConfig reduced_config(std::uint64_t seed = 7) {
  ModelConfig c;
  c.input_size = 16;
  c.trunk_channels = {2, 3, 4, 4};
  c.pyramid_channels = {4};
  c.d2_base_channels = 2;
  c.seed = seed;
  return c;
}

/// Overwrites every network with small kernels and biases of +-1 so no
/// pre-activation sits near the leaky-ReLU kink (finite differences across
/// a kink measure the kink, not the gradient).
template <typename T>
void set_smooth_test_point(ModelState<T>& s, std::uint64_t seed, double kernel_std = 0.05) {
  Rng rng(seed);
  auto fill = [&](std::vector<T>& p, const std::vector<ConvSpec>& convs) {
    for (const auto& c : convs) {
      for (std::size_t i = 0; i < c.weight_count(); ++i) p[c.weight_offset + i] = static_cast<T>(kernel_std * rng.normal());
      for (int o = 0; o < c.out_channels; ++o)
        p[c.bias_offset + o] = static_cast<T>(rng.uniform() < 0.5 ? -1.0 : 1.0) * static_cast<T>(rng.uniform(0.5, 1.0));
    }
  };
  fill(s.encoder, s.arch.encoder.convs());
  fill(s.decoder, s.arch.decoder.convs());
  fill(s.d1, s.arch.d1.convs());
  fill(s.d2, s.arch.d2.convs());
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t worst = 0;
  std::size_t checked = 0;
};

/// Central differences of `f` over every entry of `params` against `analytic`.
inline GradCheck check_gradient(std::vector<double>& params, std::span<const double> analytic,
                                const std::function<double()>& f, double h = 1e-3) {
  GradCheck r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double e = relative_error(analytic[i], numeric);
    if (e > r.max_rel) {
      r.max_rel = e;
      r.worst = i;
    }
    ++r.checked;
  }
  return r;
}

}  // namespace ctinterp::testing
