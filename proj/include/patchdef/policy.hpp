#pragma once

// Gaussian policy over bounded view rotations plus the MLP value head.
// mean = caps ⊙ tanh(MLP(b)), std fixed at 0.1·cap per dimension. Log-probs
// are evaluated at the pre-clamp sample; clamping is environment-side.

#include <cmath>
#include <vector>

#include "patchdef/camera.hpp"
#include "patchdef/nn.hpp"

namespace patchdef {

struct ActionDistribution {
  std::array<double, 2> mean;
  std::array<double, 2> std_;
};

struct ActionSample {
  Action clamped;                 // what the environment executes
  std::array<double, 2> raw;      // pre-clamp draw, used for log-probs
};

struct PolicyConfig {
  int d_b = 64;
  int hidden = 32;
  ActionCaps caps;                // per-step action bounds
  double sigma_frac = 0.1;        // std as a fraction of each cap

  std::array<double, 2> cap_vec() const { return {caps.dh_max, caps.dv_max}; }
  std::array<double, 2> sigma() const {
    return {sigma_frac * caps.dh_max, sigma_frac * caps.dv_max};
  }
};

// log N(x; mu, sigma) summed over both dimensions, as a graph node so the
// PPO ratio uses the exact op sequence that produced the rollout log-prob
template <typename T>
Var<T> gaussian_logprob(Graph<T>& g, Var<T> mean, const std::array<double, 2>& raw,
                        const std::array<double, 2>& sigma) {
  Tensor<T> x({1, 2});
  x.at(0, 0) = T(raw[0]);
  x.at(0, 1) = T(raw[1]);
  Tensor<T> inv_var({1, 2});
  inv_var.at(0, 0) = T(0.5 / (sigma[0] * sigma[0]));
  inv_var.at(0, 1) = T(0.5 / (sigma[1] * sigma[1]));
  double log_norm = std::log(sigma[0] * std::sqrt(2.0 * M_PI)) +
                    std::log(sigma[1] * std::sqrt(2.0 * M_PI));
  Var<T> diff = sub(g.value(std::move(x)), mean);
  Var<T> quad = sum(mul(mul(diff, diff), g.value(std::move(inv_var))));
  return add_const(scale(quad, T(-1)), T(-log_norm));
}

template <typename T>
class PolicyModel {
 public:
  PolicyModel(const PolicyConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.sigma_frac <= 0)
      throw std::invalid_argument("PolicyModel: sigma_frac must be positive");
    pi1_.init_he("pi.fc1", cfg.d_b, cfg.hidden, rng);
    pi2_.init_glorot("pi.fc2", cfg.hidden, 2, rng);
    v1_.init_he("v.fc1", cfg.d_b, cfg.hidden, rng);
    v2_.init_glorot("v.fc2", cfg.hidden, 1, rng);
    pi1_.register_in(params_);
    pi2_.register_in(params_);
    v1_.register_in(params_);
    v2_.register_in(params_);
  }

  // belief -> (1,2) action mean, squashed into the per-step caps
  Var<T> mean_var(Graph<T>& g, Var<T> b) {
    Var<T> h = relu(pi1_.apply(g, b));
    Var<T> raw = tanh_(pi2_.apply(g, h));
    Tensor<T> caps({1, 2});
    caps.at(0, 0) = T(cfg_.caps.dh_max);
    caps.at(0, 1) = T(cfg_.caps.dv_max);
    return mul(raw, g.value(std::move(caps)));
  }

  ActionDistribution forward(const Tensor<T>& belief) {
    Graph<T> g;
    const Tensor<T>& m = g.val(mean_var(g, g.value(belief)));
    auto s = cfg_.sigma();
    return {{double(m.at(0, 0)), double(m.at(0, 1))}, {s[0], s[1]}};
  }

  ActionSample sample(const ActionDistribution& d, Rng& rng) const {
    std::array<double, 2> raw{d.mean[0] + d.std_[0] * rng.normal(),
                              d.mean[1] + d.std_[1] * rng.normal()};
    Action a = clamp_action({raw[0], raw[1]}, cfg_.caps);
    return {a, raw};
  }

  // rollout-side log-prob: builds a throwaway graph through the same op path
  double log_prob(const Tensor<T>& belief, const std::array<double, 2>& raw) {
    Graph<T> g;
    Var<T> lp = gaussian_logprob(g, mean_var(g, g.value(belief)), raw, cfg_.sigma());
    return double(g.val(lp).data[0]);
  }

  // belief -> scalar value estimate
  Var<T> value_var(Graph<T>& g, Var<T> b) {
    Var<T> h = relu(v1_.apply(g, b));
    return reshape(v2_.apply(g, h), {1});
  }

  double value(const Tensor<T>& belief) {
    Graph<T> g;
    return double(g.val(value_var(g, g.value(belief))).data[0]);
  }

  ParamSet<T>& params() { return params_; }
  const PolicyConfig& config() const { return cfg_; }

 private:
  PolicyConfig cfg_;
  DenseLayer<T> pi1_, pi2_, v1_, v2_;
  ParamSet<T> params_;
};

}  // namespace patchdef
