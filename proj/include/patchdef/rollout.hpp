#pragma once

// Episode collection: run the recurrent perception + policy through the
// environment, recording everything the update steps need (observations,
// beliefs, actions with pre-clamp samples and log-probs, value estimates,
// per-step losses/entropies). Deterministic under the episode seed.

#include <optional>
#include <vector>

#include "patchdef/env.hpp"
#include "patchdef/perception.hpp"
#include "patchdef/policy.hpp"
#include "patchdef/render.hpp"
#include "patchdef/scene.hpp"

namespace patchdef {

struct StepRecord {
  Tensor<float> obs;                    // composited observation o'_t
  Tensor<float> belief;                 // post-fusion b_t, shape (1, d_b)
  std::array<double, 2> action{};       // executed (clamped) action a_t, t < H
  std::array<double, 2> raw_action{};   // pre-clamp Gaussian draw
  double log_prob = 0.0;                // log pi(a_t | b_t) at the raw draw
  double value = 0.0;                   // V(b_t)
  int prediction = -1;                  // argmax class
  double loss = 0.0;                    // cross-entropy at the true label
  double entropy = 0.0;                 // prediction entropy, nats
  double correct_prob = 0.0;            // softmax probability of the true label
};

struct Trajectory {
  std::vector<StepRecord> steps;        // t = 0..H (H+1 records, H actions)
  std::vector<CameraState> states;      // s_0..s_H
  int label = -1;
  int patch_index = -1;                 // -1: clean episode
  std::uint64_t seed = 0;
  bool valid = true;                    // false if any view degenerated

  int horizon() const { return int(steps.size()) - 1; }
};

inline constexpr int kMaxHorizon = 16;

template <typename T>
Trajectory rollout(PerceptionModel<T>& perception, PolicyModel<T>& policy,
                   const EnvConfig& env, const Scene& scene,
                   const Tensor<float>* patch, int patch_index, int H,
                   std::uint64_t seed, bool stochastic = true) {
  if (H < 0 || H > kMaxHorizon)
    throw std::invalid_argument("rollout: horizon " + std::to_string(H) +
                                " outside [0," + std::to_string(kMaxHorizon) + "]");
  Rng rng(seed);
  Trajectory traj;
  traj.label = scene.label;
  traj.patch_index = patch_index;
  traj.seed = seed;

  CameraState s = random_state(rng, env.bounds);
  Tensor<T> belief = perception.initial_belief();
  for (int t = 0; t <= H; ++t) {
    traj.states.push_back(s);
    RenderMapping m =
        compute_mapping(scene.card, s, env.intr, env.radius, scene.texture.shape[0]);
    if (m.degenerate) traj.valid = false;

    Graph<T> g;
    Var<T> tex = g.value(scene.texture.template cast<T>());
    std::optional<Var<T>> pv;
    if (patch) pv = g.value(patch->cast<T>());
    Var<T> img = render<T>(g, tex, m, scene.anchor, pv, scene.background);
    auto st = perception.step(g, g.value(belief), img);
    Var<T> ce = cross_entropy_logits(st.logits, scene.label);
    Var<T> ent = entropy_logits(st.logits);
    Var<T> probs = softmax(st.logits);

    StepRecord rec;
    rec.obs = g.val(img).template cast<float>();
    belief = g.val(st.belief);
    rec.belief = belief.template cast<float>();
    rec.loss = double(g.val(ce).data[0]);
    rec.entropy = double(g.val(ent).data[0]);
    const Tensor<T>& p = g.val(probs);
    rec.correct_prob = double(p.data[std::size_t(scene.label)]);
    rec.prediction = 0;
    for (int k = 1; k < int(p.numel()); ++k)
      if (p.data[std::size_t(k)] > p.data[std::size_t(rec.prediction)])
        rec.prediction = k;
    // the policy reads the stored snapshot so later recomputation from the
    // record reproduces these numbers exactly
    Tensor<T> b_act = rec.belief.template cast<T>();
    rec.value = policy.value(b_act);

    if (t < H) {
      ActionDistribution dist = policy.forward(b_act);
      ActionSample a;
      if (stochastic) {
        a = policy.sample(dist, rng);
      } else {
        a.raw = dist.mean;
        a.clamped = clamp_action({dist.mean[0], dist.mean[1]}, env.caps);
      }
      rec.action = {a.clamped.dh, a.clamped.dv};
      rec.raw_action = a.raw;
      rec.log_prob = policy.log_prob(b_act, a.raw);
      s = transition(s, {a.clamped.dh, a.clamped.dv}, env.bounds);
    }
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

// uniform-random-action episode (offline phase, policy-free)
template <typename T>
Trajectory uniform_rollout(PerceptionModel<T>& perception, const EnvConfig& env,
                           const Scene& scene, const Tensor<float>* patch,
                           int patch_index, int H, std::uint64_t seed) {
  if (H < 0 || H > kMaxHorizon)
    throw std::invalid_argument("rollout: horizon " + std::to_string(H) +
                                " outside [0," + std::to_string(kMaxHorizon) + "]");
  Rng rng(seed);
  Trajectory traj;
  traj.label = scene.label;
  traj.patch_index = patch_index;
  traj.seed = seed;

  CameraState s = random_state(rng, env.bounds);
  Tensor<T> belief = perception.initial_belief();
  for (int t = 0; t <= H; ++t) {
    traj.states.push_back(s);
    RenderMapping m =
        compute_mapping(scene.card, s, env.intr, env.radius, scene.texture.shape[0]);
    if (m.degenerate) traj.valid = false;
    Graph<T> g;
    Var<T> tex = g.value(scene.texture.template cast<T>());
    std::optional<Var<T>> pv;
    if (patch) pv = g.value(patch->cast<T>());
    Var<T> img = render<T>(g, tex, m, scene.anchor, pv, scene.background);
    auto st = perception.step(g, g.value(belief), img);

    StepRecord rec;
    rec.obs = g.val(img).template cast<float>();
    belief = g.val(st.belief);
    rec.belief = belief.template cast<float>();
    rec.loss = double(g.val(cross_entropy_logits(st.logits, scene.label)).data[0]);
    rec.entropy = double(g.val(entropy_logits(st.logits)).data[0]);
    const Tensor<T>& p = g.val(softmax(st.logits));
    rec.correct_prob = double(p.data[std::size_t(scene.label)]);
    rec.prediction = 0;
    for (int k = 1; k < int(p.numel()); ++k)
      if (p.data[std::size_t(k)] > p.data[std::size_t(rec.prediction)])
        rec.prediction = k;
    traj.steps.push_back(std::move(rec));

    if (t < H) {
      Action a = random_action(rng, env.caps);
      s = transition(s, a, env.bounds);
    }
  }
  return traj;
}

}  // namespace patchdef
