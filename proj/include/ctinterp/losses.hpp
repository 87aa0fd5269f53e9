// SPDX-License-Identifier: Apache-2.0
//
// Loss terms. Every squared norm is reduced with a MEAN over its elements,
// and batched variants average over the batch as well, so a batch of equal
// images has the same loss as one of them.

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctinterp/image.hpp"
#include "ctinterp/model.hpp"
#include "ctinterp/tensor.hpp"

namespace ctinterp {

enum class ContentVariant { MSE, Perceptual };

inline const char* to_string(ContentVariant v) { return v == ContentVariant::MSE ? "mse" : "perceptual"; }

inline ContentVariant parse_variant(const std::string& s) {
  if (s == "mse") return ContentVariant::MSE;
  if (s == "perceptual") return ContentVariant::Perceptual;
  throw std::invalid_argument("unknown content variant '" + s + "' (expected mse or perceptual)");
}

struct Hyperparams {
  double lambda = 0.5;  ///< adversarial constraint weight
  double beta = 5e-4;   ///< patch-critic adversarial weight
  double gamma = 0.2;   ///< input/reconstruction blend for the critic's second term
  int n = 7;            ///< supervised run length

  void validate() const {
    if (!(lambda >= 0.0)) throw RangeError("lambda must be >= 0");
    if (!(beta >= 0.0)) throw RangeError("beta must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw RangeError("gamma must lie in [0, 1]");
    if (n < 3) throw RangeError("n must be >= 3");
  }
};

struct LossBreakdown {
  double content = 0.0;
  double adversarial_constraint = 0.0;
  double generator_adversarial = 0.0;
  double total = 0.0;
  ContentVariant variant = ContentVariant::MSE;
};

// ---- content -------------------------------------------------------------

template <typename T>
T content_loss_mse(const Tensor<T>& x, const Tensor<T>& recon) {
  require_same_shape(x, recon, "content_loss_mse");
  if (x.size() == 0) return T(0);
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = recon.data()[i] - x.data()[i];
    acc += d * d;
  }
  return acc / static_cast<T>(x.size());
}

/// d(content_loss_mse) / d(recon).
template <typename T>
Tensor<T> content_loss_mse_grad(const Tensor<T>& x, const Tensor<T>& recon) {
  require_same_shape(x, recon, "content_loss_mse_grad");
  Tensor<T> g(recon.n(), recon.c(), recon.h(), recon.w());
  const T scale = T(2) / static_cast<T>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g.data()[i] = scale * (recon.data()[i] - x.data()[i]);
  return g;
}

inline double content_loss_mse(const Image& x, const Image& recon) {
  require_same_shape(x, recon, "content_loss_mse");
  return content_loss_mse(to_batch<double>(x), to_batch<double>(recon));
}

/// Sum over levels of the mean squared difference at that level.
template <typename T>
T pyramid_distance(const LatentPyramid<T>& a, const LatentPyramid<T>& b) {
  if (a.levels.size() != b.levels.size()) throw ShapeError("pyramid_distance: level count mismatch");
  T total = 0;
  for (std::size_t l = 0; l < a.levels.size(); ++l) total += content_loss_mse(a.levels[l], b.levels[l]);
  return total;
}

/// d(pyramid_distance) / d(b).
template <typename T>
LatentPyramid<T> pyramid_distance_grad(const LatentPyramid<T>& a, const LatentPyramid<T>& b) {
  LatentPyramid<T> g;
  for (std::size_t l = 0; l < a.levels.size(); ++l) g.levels.push_back(content_loss_mse_grad(a.levels[l], b.levels[l]));
  return g;
}

/// Feature-space distance under the frozen perceptual encoder.
template <typename T>
T content_loss_perceptual(const EncoderNet& net, std::span<const T> perceptual, const Tensor<T>& x,
                          const Tensor<T>& recon) {
  require_same_shape(x, recon, "content_loss_perceptual");
  if (perceptual.size() != net.param_count()) throw std::logic_error("perceptual snapshot has the wrong size");
  return pyramid_distance(net.forward(perceptual, x), net.forward(perceptual, recon));
}

/// Throws when Stage I has not produced a snapshot yet.
template <typename T>
T content_loss_perceptual(const ModelState<T>& s, const Tensor<T>& x, const Tensor<T>& recon) {
  if (!s.has_perceptual) throw std::logic_error("perceptual loss requested before the Stage I snapshot exists");
  return content_loss_perceptual(s.arch.encoder, std::span<const T>(s.perceptual), x, recon);
}

// ---- adversarial terms ---------------------------------------------------

/// Squared critic output; pushes the interpolation critic towards 0.
inline double adversarial_constraint_loss(double alpha_hat) { return alpha_hat * alpha_hat; }

template <typename T>
T adversarial_constraint_loss(std::span<const T> alpha_hat) {
  if (alpha_hat.empty()) return T(0);
  T acc = 0;
  for (T a : alpha_hat) acc += a * a;
  return acc / static_cast<T>(alpha_hat.size());
}

/// Mean over patches of log(1 - p). Always <= 0.
template <typename T>
T generator_adversarial_loss(const Tensor<T>& probs) {
  if (probs.size() == 0) return T(0);
  T acc = 0;
  for (T p : probs.storage()) acc += std::log1p(-p);
  return acc / static_cast<T>(probs.size());
}

template <typename T>
Tensor<T> generator_adversarial_grad(const Tensor<T>& probs) {
  Tensor<T> g(probs.n(), probs.c(), probs.h(), probs.w());
  const T inv = T(1) / static_cast<T>(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g.data()[i] = -inv / (T(1) - probs.data()[i]);
  return g;
}

inline double generator_total_loss(const LossBreakdown& parts, const Hyperparams& h) {
  return parts.content + h.lambda * parts.adversarial_constraint + h.beta * parts.generator_adversarial;
}

/// Critic objective: regress alpha on interpolants, 0 on input/recon blends.
inline double d1_loss(double alpha_hat_interp, double alpha, double alpha_hat_mix) {
  const double e = alpha_hat_interp - alpha;
  return e * e + alpha_hat_mix * alpha_hat_mix;
}

template <typename T>
T d1_loss(std::span<const T> alpha_hat_interp, std::span<const double> alpha, std::span<const T> alpha_hat_mix) {
  if (alpha_hat_interp.size() != alpha.size()) throw ShapeError("d1_loss: one alpha per prediction");
  T a = 0, b = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const T e = alpha_hat_interp[i] - static_cast<T>(alpha[i]);
    a += e * e;
  }
  for (T m : alpha_hat_mix) b += m * m;
  if (!alpha.empty()) a /= static_cast<T>(alpha.size());
  if (!alpha_hat_mix.empty()) b /= static_cast<T>(alpha_hat_mix.size());
  return a + b;
}

/// Discriminator side of the minimax game, negated for minimization.
template <typename T>
T d2_loss(const Tensor<T>& real_probs, const Tensor<T>& fake_probs) {
  T r = 0, f = 0;
  for (T p : real_probs.storage()) r += std::log(p);
  for (T p : fake_probs.storage()) f += std::log1p(-p);
  if (real_probs.size() > 0) r /= static_cast<T>(real_probs.size());
  if (fake_probs.size() > 0) f /= static_cast<T>(fake_probs.size());
  return -r - f;
}

// ---- supervised run loss -------------------------------------------------

/// Mean of the per-pair content loss over the n-2 interior slices.
template <typename T>
T step2_supervised_loss(const Tensor<T>& truth, const Tensor<T>& generated, ContentVariant variant,
                        const EncoderNet* net = nullptr, std::span<const T> perceptual = {}) {
  require_same_shape(truth, generated, "step2_supervised_loss");
  if (truth.n() < 1) throw RangeError("step2_supervised_loss: need n >= 3 (at least one interior slice)");
  if (variant == ContentVariant::MSE) return content_loss_mse(truth, generated);
  if (net == nullptr || perceptual.empty()) throw std::logic_error("perceptual variant needs the frozen encoder");
  return content_loss_perceptual(*net, perceptual, truth, generated);
}

inline double step2_supervised_loss(std::span<const Image> truth, std::span<const Image> generated) {
  if (truth.size() != generated.size()) throw ShapeError("step2_supervised_loss: sequence length mismatch");
  if (truth.empty()) throw RangeError("step2_supervised_loss: need n >= 3 (at least one interior slice)");
  return step2_supervised_loss(to_batch<double>(truth), to_batch<double>(generated), ContentVariant::MSE);
}

}  // namespace ctinterp
