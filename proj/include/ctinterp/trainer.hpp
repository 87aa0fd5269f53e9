// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training.
//
//   Stage I   autoencoder + interpolation critic (content + lambda * L_ac),
//             ends with the frozen perceptual snapshot.
//   Stage II  alternates unsupervised Step I iterations (full objective with
//             the patch critic) and supervised Step II iterations on runs of
//             n consecutive slices.
//
// Objectives are exposed separately from the update so their analytic
// gradients can be checked against finite differences of the very same
// forward computation.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctinterp/data.hpp"
#include "ctinterp/losses.hpp"
#include "ctinterp/model.hpp"
#include "ctinterp/optimizer.hpp"

namespace ctinterp {

struct TrainConfig {
  std::int64_t stage1_iters = 50000;
  /// Counts Step I and Step II iterations together.
  std::int64_t stage2_iters = 50000;
  double lr = 1e-4;
  double lambda = 0.5;
  /// Unset selects 5e-3 at 512 px and above, 5e-4 otherwise.
  std::optional<double> beta;
  double gamma = 0.2;
  int n = 7;
  int batch_size = 8;
  int step1_count = 1;
  int step2_count = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ContentVariant content_variant = ContentVariant::MSE;
  bool deterministic = true;
  /// Also update both critics during Step II iterations.
  bool critics_in_step2 = false;
  int checkpoint_every = 0;

  double effective_beta(int input_size) const {
    if (beta) return *beta;
    return input_size >= 512 ? 5e-3 : 5e-4;
  }

  Hyperparams hyperparams(int input_size) const { return {lambda, effective_beta(input_size), gamma, n}; }
  AdamOptions adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }

  void validate() const {
    if (stage1_iters < 0 || stage2_iters < 0) throw RangeError("iteration counts must be >= 0");
    if (!(lr > 0.0)) throw RangeError("lr must be > 0");
    if (beta && !(*beta >= 0.0)) throw RangeError("beta must be >= 0");
    if (batch_size < 1) throw RangeError("batch_size must be >= 1");
    if (step1_count < 0 || step2_count < 0 || step1_count + step2_count == 0)
      throw RangeError("alternation needs a positive cycle");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw RangeError("adam moment decays must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw RangeError("adam_eps must be > 0");
    if (checkpoint_every < 0) throw RangeError("checkpoint_every must be >= 0");
    Hyperparams{lambda, beta.value_or(0.0), gamma, n}.validate();
  }
};

template <typename T>
struct Gradients {
  std::vector<T> encoder, decoder, d1, d2;

  explicit Gradients(const ModelState<T>& s)
      : encoder(s.encoder.size()), decoder(s.decoder.size()), d1(s.d1.size()), d2(s.d2.size()) {}
};

// ---- pyramid plumbing ----------------------------------------------------

template <typename T>
LatentPyramid<T> slice_pyramid(const LatentPyramid<T>& p, int first, int count) {
  LatentPyramid<T> out;
  for (const auto& l : p.levels) out.levels.push_back(l.slice(first, count));
  return out;
}

/// Sample k of the result is alpha_k * p[first[k]] + (1 - alpha_k) * p[second[k]].
template <typename T>
LatentPyramid<T> pair_mix(const LatentPyramid<T>& p, std::span<const int> first, std::span<const int> second,
                          std::span<const double> alphas) {
  LatentPyramid<T> out;
  const int m = static_cast<int>(alphas.size());
  for (const auto& l : p.levels) {
    Tensor<T> t(m, l.sample_shape());
    const std::size_t per = l.sample_size();
    for (int k = 0; k < m; ++k) {
      const T a = static_cast<T>(mix_weight_first(alphas[k]));
      const T b = static_cast<T>(1.0 - mix_weight_first(alphas[k]));
      const T* u = l.sample(first[k]);
      const T* v = l.sample(second[k]);
      T* d = t.sample(k);
      for (std::size_t i = 0; i < per; ++i) d[i] = a * u[i] + b * v[i];
    }
    out.levels.push_back(std::move(t));
  }
  return out;
}

template <typename T>
void pair_mix_backward(const LatentPyramid<T>& dz, std::span<const int> first, std::span<const int> second,
                       std::span<const double> alphas, LatentPyramid<T>& dp) {
  for (std::size_t l = 0; l < dz.levels.size(); ++l) {
    const Tensor<T>& g = dz.levels[l];
    Tensor<T>& acc = dp.levels[l];
    const std::size_t per = g.sample_size();
    for (int k = 0; k < g.n(); ++k) {
      const T a = static_cast<T>(mix_weight_first(alphas[k]));
      const T b = static_cast<T>(1.0 - mix_weight_first(alphas[k]));
      const T* src = g.sample(k);
      T* u = acc.sample(first[k]);
      T* v = acc.sample(second[k]);
      for (std::size_t i = 0; i < per; ++i) {
        u[i] += a * src[i];
        v[i] += b * src[i];
      }
    }
  }
}

namespace detail {

template <typename T>
LatentPyramid<T> zeros_like(const LatentPyramid<T>& p) {
  LatentPyramid<T> z;
  for (const auto& l : p.levels) z.levels.emplace_back(l.n(), l.sample_shape());
  return z;
}

template <typename T>
void add_pyramid(LatentPyramid<T>& acc, const LatentPyramid<T>& v) {
  for (std::size_t l = 0; l < acc.levels.size(); ++l) add_into(acc.levels[l], v.levels[l]);
}

template <typename T>
std::span<const T> cspan(const std::vector<T>& v) {
  return std::span<const T>(v);
}

/// Content term on (target, output); writes d/d(output) when `grad` is set.
template <typename T>
T content_term(const ModelState<T>& s, ContentVariant variant, const Tensor<T>& target, const Tensor<T>& output,
               Tensor<T>* grad) {
  if (variant == ContentVariant::MSE) {
    if (grad != nullptr) *grad = content_loss_mse_grad(target, output);
    return content_loss_mse(target, output);
  }
  if (!s.has_perceptual) throw std::logic_error("perceptual content loss needs the Stage I snapshot");
  const auto& enc = s.arch.encoder;
  const auto perc = cspan(s.perceptual);
  const LatentPyramid<T> ft = enc.forward(perc, target);
  EncoderNet::Trace<T> trace;
  const LatentPyramid<T> fo = enc.forward(perc, output, grad != nullptr ? &trace : nullptr);
  if (grad != nullptr) {
    std::vector<T> discard(s.perceptual.size());
    *grad = enc.backward(perc, trace, pyramid_distance_grad(ft, fo), std::span<T>(discard), true);
  }
  return pyramid_distance(ft, fo);
}

inline std::vector<int> iota_vec(int first, int count) {
  std::vector<int> v(count);
  for (int i = 0; i < count; ++i) v[i] = first + i;
  return v;
}

}  // namespace detail

struct ObjectiveOptions {
  Hyperparams hyper;
  ContentVariant variant = ContentVariant::MSE;
  /// Include the patch-critic term; off during Stage I.
  bool use_d2 = true;
};

/// Generator objective of an unsupervised iteration:
/// content + lambda * L_ac + beta * L_Gen. Content is the reconstruction
/// loss of both endpoint batches. Gradients w.r.t. encoder and decoder
/// parameters are accumulated into `g` when non-null.
template <typename T>
LossBreakdown generator_objective(const ModelState<T>& s, const Tensor<T>& x1, const Tensor<T>& x2,
                                  std::span<const double> alphas, const ObjectiveOptions& opt, Gradients<T>* g) {
  require_same_shape(x1, x2, "generator_objective");
  const int n = x1.n();
  if (static_cast<int>(alphas.size()) != n) throw ShapeError("generator_objective: one alpha per pair");
  const auto& a = s.arch;
  const bool grad = g != nullptr;

  const Tensor<T> x = concat_batch(x1, x2);
  EncoderNet::Trace<T> enc_trace;
  const LatentPyramid<T> p = a.encoder.forward(detail::cspan(s.encoder), x, grad ? &enc_trace : nullptr);

  DecoderNet::Trace<T> rec_trace;
  const Tensor<T> recon = a.decoder.forward(detail::cspan(s.decoder), p, grad ? &rec_trace : nullptr);
  Tensor<T> d_recon;
  const T content = detail::content_term(s, opt.variant, x, recon, grad ? &d_recon : nullptr);

  const auto first = detail::iota_vec(0, n), second = detail::iota_vec(n, n);
  const LatentPyramid<T> z = pair_mix(p, std::span<const int>(first), std::span<const int>(second), alphas);
  DecoderNet::Trace<T> mix_trace;
  const Tensor<T> xhat = a.decoder.forward(detail::cspan(s.decoder), z, grad ? &mix_trace : nullptr);

  CriticNet::Trace<T> c_trace;
  const std::vector<T> ahat = a.d1.forward(detail::cspan(s.d1), xhat, grad ? &c_trace : nullptr);
  const T l_ac = adversarial_constraint_loss(std::span<const T>(ahat));

  T l_gen = 0;
  Tensor<T> probs;
  PatchCriticNet::Trace<T> p_trace;
  if (opt.use_d2) {
    probs = a.d2.forward(detail::cspan(s.d2), xhat, grad ? &p_trace : nullptr);
    l_gen = generator_adversarial_loss(probs);
  }

  LossBreakdown out;
  out.variant = opt.variant;
  out.content = static_cast<double>(content);
  out.adversarial_constraint = static_cast<double>(l_ac);
  out.generator_adversarial = static_cast<double>(l_gen);
  out.total = generator_total_loss(out, opt.hyper);
  if (!grad) return out;

  // d(total)/d(xhat) from both critics; critic parameter grads are discarded.
  std::vector<T> dahat(ahat.size());
  for (std::size_t i = 0; i < ahat.size(); ++i)
    dahat[i] = static_cast<T>(opt.hyper.lambda) * T(2) * ahat[i] / static_cast<T>(ahat.size());
  std::vector<T> discard_d1(s.d1.size());
  Tensor<T> d_xhat = a.d1.backward(detail::cspan(s.d1), c_trace, std::span<const T>(dahat),
                                   std::span<T>(discard_d1), true);
  if (opt.use_d2) {
    Tensor<T> dp = generator_adversarial_grad(probs);
    for (T& v : dp.storage()) v *= static_cast<T>(opt.hyper.beta);
    std::vector<T> discard_d2(s.d2.size());
    add_into(d_xhat, a.d2.backward(detail::cspan(s.d2), p_trace, dp, std::span<T>(discard_d2), true));
  }

  const LatentPyramid<T> dz = a.decoder.backward(detail::cspan(s.decoder), mix_trace, d_xhat, std::span<T>(g->decoder));
  LatentPyramid<T> dp = a.decoder.backward(detail::cspan(s.decoder), rec_trace, d_recon, std::span<T>(g->decoder));
  pair_mix_backward(dz, std::span<const int>(first), std::span<const int>(second), alphas, dp);
  a.encoder.backward(detail::cspan(s.encoder), enc_trace, dp, std::span<T>(g->encoder), false);
  return out;
}

struct CriticResult {
  double loss = 0.0;
};

/// Interpolation-critic objective: mean (d1(xhat) - alpha)^2 + mean d1(mix)^2
/// with mix = gamma * x1 + (1 - gamma) * recon(x1). Accumulates into g->d1.
/// The interpolants are returned through `xhat_out` when non-null.
template <typename T>
double d1_objective(const ModelState<T>& s, const Tensor<T>& x1, const Tensor<T>& x2, std::span<const double> alphas,
                    double gamma, Gradients<T>* g, Tensor<T>* xhat_out = nullptr) {
  const int n = x1.n();
  const auto& a = s.arch;
  const LatentPyramid<T> p = a.encoder.forward(detail::cspan(s.encoder), concat_batch(x1, x2));
  const auto first = detail::iota_vec(0, n), second = detail::iota_vec(n, n);
  Tensor<T> xhat = a.decoder.forward(detail::cspan(s.decoder),
                                     pair_mix(p, std::span<const int>(first), std::span<const int>(second), alphas));
  Tensor<T> mix = a.decoder.forward(detail::cspan(s.decoder), slice_pyramid(p, 0, n));
  const T gm = static_cast<T>(gamma);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = gm * x1.data()[i] + (T(1) - gm) * mix.data()[i];

  CriticNet::Trace<T> trace;
  const std::vector<T> pred = a.d1.forward(detail::cspan(s.d1), concat_batch(xhat, mix), g ? &trace : nullptr);
  const std::span<const T> pi(pred.data(), n), pm(pred.data() + n, n);
  const double loss = static_cast<double>(d1_loss(pi, alphas, pm));
  if (g != nullptr) {
    std::vector<T> dpred(pred.size());
    for (int i = 0; i < n; ++i) {
      dpred[i] = T(2) * (pred[i] - static_cast<T>(alphas[i])) / static_cast<T>(n);
      dpred[n + i] = T(2) * pred[n + i] / static_cast<T>(n);
    }
    a.d1.backward(detail::cspan(s.d1), trace, std::span<const T>(dpred), std::span<T>(g->d1), false);
  }
  if (xhat_out != nullptr) *xhat_out = std::move(xhat);
  return loss;
}

/// Patch-critic objective on real vs generated images. Accumulates into g->d2.
template <typename T>
double d2_objective(const ModelState<T>& s, const Tensor<T>& real, const Tensor<T>& fake, Gradients<T>* g) {
  const auto& a = s.arch;
  PatchCriticNet::Trace<T> trace;
  const Tensor<T> probs = a.d2.forward(detail::cspan(s.d2), concat_batch(real, fake), g ? &trace : nullptr);
  const Tensor<T> pr = probs.slice(0, real.n()), pf = probs.slice(real.n(), fake.n());
  const double loss = static_cast<double>(d2_loss(pr, pf));
  if (g != nullptr) {
    Tensor<T> dp(probs.n(), probs.c(), probs.h(), probs.w());
    const std::size_t nr = pr.size();
    for (std::size_t i = 0; i < nr; ++i) dp.data()[i] = -T(1) / (probs.data()[i] * static_cast<T>(nr));
    for (std::size_t i = nr; i < probs.size(); ++i)
      dp.data()[i] = T(1) / ((T(1) - probs.data()[i]) * static_cast<T>(pf.size()));
    a.d2.backward(detail::cspan(s.d2), trace, dp, std::span<T>(g->d2), false);
  }
  return loss;
}

/// Supervised objective on one run of n consecutive slices: endpoints
/// run[0], run[n-1]; interior slice i is generated at alpha = 1 - i/(n-1).
template <typename T>
double step2_objective(const ModelState<T>& s, const Tensor<T>& run, ContentVariant variant, Gradients<T>* g,
                       Tensor<T>* generated_out = nullptr) {
  const int n = run.n();
  if (n < 3) throw RangeError("a supervised run needs at least 3 slices");
  const auto& a = s.arch;
  const bool grad = g != nullptr;
  const Tensor<T> ends = concat_batch(run.slice(0, 1), run.slice(n - 1, 1));
  EncoderNet::Trace<T> enc_trace;
  const LatentPyramid<T> p = a.encoder.forward(detail::cspan(s.encoder), ends, grad ? &enc_trace : nullptr);

  const std::vector<double> alphas = run_alphas(n);
  const std::vector<int> first(n - 2, 0), second(n - 2, 1);
  const LatentPyramid<T> z = pair_mix(p, std::span<const int>(first), std::span<const int>(second),
                                      std::span<const double>(alphas));
  DecoderNet::Trace<T> dec_trace;
  Tensor<T> gen = a.decoder.forward(detail::cspan(s.decoder), z, grad ? &dec_trace : nullptr);
  const Tensor<T> truth = run.slice(1, n - 2);
  Tensor<T> dgen;
  const T loss = detail::content_term(s, variant, truth, gen, grad ? &dgen : nullptr);
  if (grad) {
    const LatentPyramid<T> dz = a.decoder.backward(detail::cspan(s.decoder), dec_trace, dgen, std::span<T>(g->decoder));
    LatentPyramid<T> dp = detail::zeros_like(p);
    pair_mix_backward(dz, std::span<const int>(first), std::span<const int>(second), std::span<const double>(alphas),
                      dp);
    a.encoder.backward(detail::cspan(s.encoder), enc_trace, dp, std::span<T>(g->encoder), false);
  }
  if (generated_out != nullptr) *generated_out = std::move(gen);
  return static_cast<double>(loss);
}

// ---- iterations -------------------------------------------------------------

struct StepIResult {
  LossBreakdown generator;
  double d1_loss = 0.0;
  std::optional<double> d2_loss;
};

struct StepIOptions {
  ContentVariant variant = ContentVariant::MSE;
  bool use_d2 = true;
  bool update_d2 = true;
  std::optional<double> beta_override;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite ") + what);
}

}  // namespace detail

/// One unsupervised iteration: generator update on the full objective,
/// then the interpolation critic, then the patch critic, each from fresh
/// forward passes.
template <typename T>
StepIResult step1_iteration(ModelState<T>& s, const Tensor<T>& x1, const Tensor<T>& x2, std::span<const double> alphas,
                            const TrainConfig& cfg, const StepIOptions& so) {
  ObjectiveOptions opt;
  opt.hyper = cfg.hyperparams(s.config().input_size);
  if (so.beta_override) opt.hyper.beta = *so.beta_override;
  opt.variant = so.variant;
  opt.use_d2 = so.use_d2;
  const AdamOptions adam = cfg.adam();
  StepIResult r;

  {
    Gradients<T> g(s);
    r.generator = generator_objective(s, x1, x2, alphas, opt, &g);
    detail::require_finite(r.generator.total, "generator loss");
    adam_step(std::span<T>(s.encoder), detail::cspan(g.encoder), s.encoder_opt, adam);
    adam_step(std::span<T>(s.decoder), detail::cspan(g.decoder), s.decoder_opt, adam);
  }
  Tensor<T> xhat;
  {
    Gradients<T> g(s);
    r.d1_loss = d1_objective(s, x1, x2, alphas, opt.hyper.gamma, &g, &xhat);
    detail::require_finite(r.d1_loss, "interpolation critic loss");
    adam_step(std::span<T>(s.d1), detail::cspan(g.d1), s.d1_opt, adam);
  }
  if (so.update_d2) {
    Gradients<T> g(s);
    r.d2_loss = d2_objective(s, x1, xhat, &g);
    detail::require_finite(*r.d2_loss, "patch critic loss");
    adam_step(std::span<T>(s.d2), detail::cspan(g.d2), s.d2_opt, adam);
  }
  return r;
}

struct StepIIResult {
  double loss = 0.0;
  std::optional<double> d1_loss;
  std::optional<double> d2_loss;
};

/// One supervised iteration on a run of n slices. Only the generator moves
/// unless cfg.critics_in_step2 is set.
template <typename T>
StepIIResult step2_iteration(ModelState<T>& s, const Tensor<T>& run, const TrainConfig& cfg) {
  if (run.n() != cfg.n)
    throw DataError("run has " + std::to_string(run.n()) + " slices, expected n = " + std::to_string(cfg.n));
  const AdamOptions adam = cfg.adam();
  StepIIResult r;
  Tensor<T> generated;
  {
    Gradients<T> g(s);
    r.loss = step2_objective(s, run, cfg.content_variant, &g, &generated);
    detail::require_finite(r.loss, "supervised loss");
    adam_step(std::span<T>(s.encoder), detail::cspan(g.encoder), s.encoder_opt, adam);
    adam_step(std::span<T>(s.decoder), detail::cspan(g.decoder), s.decoder_opt, adam);
  }
  if (cfg.critics_in_step2) {
    const int m = run.n() - 2;
    Tensor<T> x1(m, 1, run.h(), run.w()), x2(m, 1, run.h(), run.w());
    for (int k = 0; k < m; ++k) {
      std::copy_n(run.sample(0), run.sample_size(), x1.sample(k));
      std::copy_n(run.sample(run.n() - 1), run.sample_size(), x2.sample(k));
    }
    const std::vector<double> alphas = run_alphas(run.n());
    Tensor<T> xhat;
    Gradients<T> g1(s);
    r.d1_loss = d1_objective(s, x1, x2, std::span<const double>(alphas), cfg.gamma, &g1, &xhat);
    detail::require_finite(*r.d1_loss, "interpolation critic loss");
    adam_step(std::span<T>(s.d1), detail::cspan(g1.d1), s.d1_opt, adam);
    Gradients<T> g2(s);
    r.d2_loss = d2_objective(s, run.slice(1, m), xhat, &g2);
    detail::require_finite(*r.d2_loss, "patch critic loss");
    adam_step(std::span<T>(s.d2), detail::cspan(g2.d2), s.d2_opt, adam);
  }
  return r;
}

// ---- reports -----------------------------------------------------------------

enum class StepTag { StageI, StepI, StepII };

inline const char* to_string(StepTag t) {
  switch (t) {
    case StepTag::StageI: return "stage1";
    case StepTag::StepI: return "stage2/step1";
    case StepTag::StepII: return "stage2/step2";
  }
  return "?";
}

struct StepRecord {
  std::int64_t iteration = 0;
  StepTag tag = StepTag::StageI;
  std::optional<LossBreakdown> generator;
  std::optional<double> d1_loss;
  std::optional<double> d2_loss;
  std::optional<double> supervised_loss;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["tag"] = to_string(tag);
    if (generator) {
      j["content"] = generator->content;
      j["adversarial_constraint"] = generator->adversarial_constraint;
      j["generator_adversarial"] = generator->generator_adversarial;
      j["total"] = generator->total;
      j["variant"] = ctinterp::to_string(generator->variant);
    }
    if (d1_loss) j["d1_loss"] = *d1_loss;
    if (d2_loss) j["d2_loss"] = *d2_loss;
    if (supervised_loss) j["supervised_loss"] = *supervised_loss;
    j["wall_ms"] = wall_ms;
    return j;
  }
};

struct TrainReport {
  std::vector<StepRecord> records;
  std::vector<std::string> checkpoints;

  std::size_t count(StepTag t) const {
    std::size_t c = 0;
    for (const auto& r : records) c += r.tag == t;
    return c;
  }

  /// One JSON object per line.
  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& r : records) os << r.to_json().dump() << '\n';
    return os.str();
  }

  void append(const TrainReport& o) {
    records.insert(records.end(), o.records.begin(), o.records.end());
    checkpoints.insert(checkpoints.end(), o.checkpoints.begin(), o.checkpoints.end());
  }
};

/// Raised when a loss or gradient stops being finite. Carries the path of
/// the diagnostic checkpoint written before aborting (empty if none).
class TrainingCollapse : public std::runtime_error {
 public:
  TrainingCollapse(const std::string& what, std::string checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

template <typename T>
struct TrainHooks {
  /// Persists the state and returns where it went. `diagnostic` marks the
  /// abort-time checkpoint after a numerical collapse.
  std::function<std::string(const ModelState<T>&, bool diagnostic)> checkpoint;
  std::function<void(const StepRecord&)> on_record;
};

namespace detail {

template <typename T>
void draw_step1_batch(ModelState<T>& s, std::span<const SliceVolume> data, int batch, Tensor<T>& x1, Tensor<T>& x2,
                      std::vector<double>& alphas) {
  std::vector<Image> a, b;
  alphas.clear();
  for (int i = 0; i < batch; ++i) {
    auto [ra, rb] = sample_pair_refs(data, s.rng);
    a.push_back(data[ra.volume].slices[ra.index]);
    b.push_back(data[rb.volume].slices[rb.index]);
  }
  for (int i = 0; i < batch; ++i) alphas.push_back(s.rng.uniform());
  x1 = to_batch<T>(std::span<const Image>(a));
  x2 = to_batch<T>(std::span<const Image>(b));
}

template <typename T, typename F>
void run_guarded(ModelState<T>& s, const TrainHooks<T>& hooks, TrainReport& report, F&& body) {
  try {
    body();
  } catch (const NonFiniteError& e) {
    std::string path;
    if (hooks.checkpoint) {
      path = hooks.checkpoint(s, true);
      report.checkpoints.push_back(path);
    }
    throw TrainingCollapse(std::string("training collapsed at iteration ") + std::to_string(s.iteration) + ": " +
                               e.what(),
                           path);
  }
}

template <typename T>
void finish_iteration(ModelState<T>& s, const TrainConfig& cfg, const TrainHooks<T>& hooks, TrainReport& report,
                      StepRecord rec, std::chrono::steady_clock::time_point t0) {
  rec.wall_ms = cfg.deterministic
                    ? 0.0
                    : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  ++s.iteration;
  if (hooks.on_record) hooks.on_record(rec);
  report.records.push_back(std::move(rec));
  if (cfg.checkpoint_every > 0 && hooks.checkpoint && s.iteration % cfg.checkpoint_every == 0)
    report.checkpoints.push_back(hooks.checkpoint(s, false));
}

}  // namespace detail

/// Freezes the current encoder as the perceptual network and enters Stage II.
template <typename T>
void take_perceptual_snapshot(ModelState<T>& s) {
  s.perceptual = s.encoder;
  s.has_perceptual = true;
  s.stage = Stage::II;
  s.stage2_start = s.iteration;
}

/// Autoencoder + interpolation-critic pre-training up to cfg.stage1_iters
/// total iterations, then the snapshot. A state already in Stage II is
/// returned untouched.
template <typename T>
TrainReport stage1_train(ModelState<T>& s, std::span<const SliceVolume> data, const TrainConfig& cfg,
                         const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  TrainReport report;
  if (s.stage == Stage::II) return report;
  if (count_windows(data, 1) == 0) throw DataError("training data is empty");
  StepIOptions so;
  so.variant = ContentVariant::MSE;
  so.use_d2 = false;
  so.update_d2 = false;
  Tensor<T> x1, x2;
  std::vector<double> alphas;
  detail::run_guarded(s, hooks, report, [&] {
    while (s.iteration < cfg.stage1_iters) {
      const auto t0 = std::chrono::steady_clock::now();
      detail::draw_step1_batch(s, data, cfg.batch_size, x1, x2, alphas);
      const StepIResult r = step1_iteration(s, x1, x2, std::span<const double>(alphas), cfg, so);
      StepRecord rec;
      rec.iteration = s.iteration;
      rec.tag = StepTag::StageI;
      rec.generator = r.generator;
      rec.d1_loss = r.d1_loss;
      detail::finish_iteration(s, cfg, hooks, report, std::move(rec), t0);
    }
  });
  take_perceptual_snapshot(s);
  return report;
}

/// Schedule position -> tag for a (step1_count, step2_count) cycle.
inline StepTag stage2_tag(std::int64_t k, const TrainConfig& cfg) {
  const std::int64_t cycle = cfg.step1_count + cfg.step2_count;
  return (k % cycle) < cfg.step1_count ? StepTag::StepI : StepTag::StepII;
}

/// Alternating Stage II training for cfg.stage2_iters iterations counted
/// from the snapshot.
template <typename T>
TrainReport stage2_train(ModelState<T>& s, std::span<const SliceVolume> data, const TrainConfig& cfg,
                         const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (!s.has_perceptual || s.stage != Stage::II)
    throw std::logic_error("Stage II requires a completed Stage I (perceptual snapshot missing)");
  if (count_windows(data, 1) == 0) throw DataError("training data is empty");
  if (cfg.step2_count > 0 && count_windows(data, cfg.n) == 0)
    throw DataError("no training volume has " + std::to_string(cfg.n) + " consecutive slices");
  StepIOptions so;
  so.variant = cfg.content_variant;
  TrainReport report;
  Tensor<T> x1, x2;
  std::vector<double> alphas;
  detail::run_guarded(s, hooks, report, [&] {
    while (s.iteration - s.stage2_start < cfg.stage2_iters) {
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord rec;
      rec.iteration = s.iteration;
      rec.tag = stage2_tag(s.iteration - s.stage2_start, cfg);
      if (rec.tag == StepTag::StepI) {
        detail::draw_step1_batch(s, data, cfg.batch_size, x1, x2, alphas);
        const StepIResult r = step1_iteration(s, x1, x2, std::span<const double>(alphas), cfg, so);
        rec.generator = r.generator;
        rec.d1_loss = r.d1_loss;
        rec.d2_loss = r.d2_loss;
      } else {
        const RunSample run = sample_consecutive_run(data, cfg.n, s.rng);
        const StepIIResult r = step2_iteration(s, to_batch<T>(std::span<const Image>(run.slices)), cfg);
        rec.supervised_loss = r.loss;
        rec.d1_loss = r.d1_loss;
        rec.d2_loss = r.d2_loss;
      }
      detail::finish_iteration(s, cfg, hooks, report, std::move(rec), t0);
    }
  });
  return report;
}

}  // namespace ctinterp
