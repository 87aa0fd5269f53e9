// Finite-difference checks of every training objective on the reduced model.
#pragma once

#include <string>
#include <vector>

#include "ctinterp/trainer.hpp"
#include "test_support.hpp"

namespace ctinterp::testing {

struct ObjectiveCheck {
  std::string name;
  std::string network;
  GradCheck result;
};

struct GradientProblem {
  ModelState<double> state;
  Tensor<double> x1, x2, run;
  std::vector<double> alphas;

  GradientProblem() : state(make_state<double>(reduced_config())) {
    set_smooth_test_point(state, 101);
    // A different smooth encoder as the frozen perceptual network.
    ModelState<double> other = make_state<double>(reduced_config(8));
    set_smooth_test_point(other, 202);
    state.perceptual = other.encoder;
    state.has_perceptual = true;
    Rng rng(303);
    x1 = random_tensor<double>(2, 1, 16, 16, rng);
    x2 = random_tensor<double>(2, 1, 16, 16, rng);
    run = random_tensor<double>(5, 1, 16, 16, rng);
    alphas = {0.3, 0.8};
  }
};

inline std::vector<ObjectiveCheck> run_gradient_checks(double h = 1e-3) {
  GradientProblem p;
  auto& s = p.state;
  const std::span<const double> al(p.alphas);
  std::vector<ObjectiveCheck> out;

  for (ContentVariant v : {ContentVariant::MSE, ContentVariant::Perceptual}) {
    ObjectiveOptions opt;
    opt.hyper = Hyperparams{0.5, 5e-2, 0.2, 5};
    opt.variant = v;
    opt.use_d2 = true;
    Gradients<double> g(s);
    generator_objective(s, p.x1, p.x2, al, opt, &g);
    auto f = [&] { return generator_objective<double>(s, p.x1, p.x2, al, opt, nullptr).total; };
    const std::string name = std::string("step1 generator (") + to_string(v) + ")";
    out.push_back({name, "encoder", check_gradient(s.encoder, g.encoder, f, h)});
    out.push_back({name, "decoder", check_gradient(s.decoder, g.decoder, f, h)});
  }
  {
    Gradients<double> g(s);
    d1_objective(s, p.x1, p.x2, al, 0.2, &g);
    auto f = [&] { return d1_objective<double>(s, p.x1, p.x2, al, 0.2, nullptr); };
    out.push_back({"interpolation critic", "d1", check_gradient(s.d1, g.d1, f, h)});
  }
  {
    Tensor<double> fake;
    d1_objective<double>(s, p.x1, p.x2, al, 0.2, nullptr, &fake);
    Gradients<double> g(s);
    d2_objective(s, p.x1, fake, &g);
    auto f = [&] { return d2_objective<double>(s, p.x1, fake, nullptr); };
    out.push_back({"patch critic", "d2", check_gradient(s.d2, g.d2, f, h)});
  }
  for (ContentVariant v : {ContentVariant::MSE, ContentVariant::Perceptual}) {
    Gradients<double> g(s);
    step2_objective(s, p.run, v, &g);
    auto f = [&] { return step2_objective<double>(s, p.run, v, nullptr); };
    const std::string name = std::string("step2 supervised (") + to_string(v) + ")";
    out.push_back({name, "encoder", check_gradient(s.encoder, g.encoder, f, h)});
    out.push_back({name, "decoder", check_gradient(s.decoder, g.decoder, f, h)});
  }
  return out;
}

}  // namespace ctinterp::testing
