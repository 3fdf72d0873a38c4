#pragma once

// Gradient-based patch attacks on the perception stack: single-step (FGSM),
// iterative (PGD), momentum (MIM), expectation-over-views (EoT) and the
// uniform-policy multi-step adaptive attack. All share one signed-ascent core
// so degenerate configurations collapse onto each other exactly, and all are
// bit-reproducible under a fixed seed.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "patchdef/checkpoint.hpp"
#include "patchdef/env.hpp"
#include "patchdef/perception.hpp"
#include "patchdef/render.hpp"

namespace patchdef {

struct AttackConfig {
  int iterations = 30;
  double alpha = 8.0 / 255.0;  // per-iteration step in pixel units
  double momentum = 1.0;       // MIM decay
  int eot_samples = 10;        // views averaged per EoT/adaptive iteration
  int target_class = -1;       // < 0: untargeted (maximize true-class loss)
  std::uint64_t seed = 0;
  int horizon = 1;             // adaptive attack: observations per trajectory
  int unroll_cap = 8;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
    if (alpha < 0) throw std::invalid_argument("attack: alpha must be >= 0");
    if (momentum < 0) throw std::invalid_argument("attack: momentum must be >= 0");
    if (eot_samples < 1) throw std::invalid_argument("attack: eot_samples must be >= 1");
  }
};

template <typename T>
struct AttackResult {
  Tensor<T> patch;
  std::vector<double> objective;  // iterations+1 entries: before each step + final
  bool zero_gradient = false;     // gradient vanished at every iteration
};

// momentum-attack defaults differ from the iterative baseline
inline AttackConfig mim_defaults() {
  AttackConfig c;
  c.iterations = 150;
  c.alpha = 1.5 / 255.0;
  c.momentum = 1.0;
  return c;
}

namespace detail {
template <typename T>
inline T sign_of(T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }
}  // namespace detail

// Signed gradient ascent p <- clamp(p + alpha * sign(dir), 0, 1) where dir is
// the raw gradient, or the L1-normalized momentum accumulator when momentum
// tracking is on. build(g, patch_var, rng) must return a scalar objective.
template <typename T, typename BuildObjective>
AttackResult<T> signed_ascent(const Tensor<T>& init, int iters, double alpha,
                              bool track_momentum, double mu, Rng& rng,
                              BuildObjective&& build) {
  Tensor<T> p = init;
  Tensor<T> acc = Tensor<T>::zeros(init.shape);
  AttackResult<T> res;
  res.zero_gradient = true;
  for (int it = 0; it < iters; ++it) {
    Graph<T> g;
    Var<T> pv = g.leaf(p, true);
    Var<T> obj = build(g, pv, rng);
    g.backward(obj);
    res.objective.push_back(double(g.val(obj).data[0]));
    const Tensor<T>& grad = g.leaf_grad(pv);
    T l1 = T(0);
    for (T v : grad.data) l1 += std::abs(v);
    if (l1 > T(0)) res.zero_gradient = false;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      T dir;
      if (track_momentum) {
        acc.data[i] = T(mu) * acc.data[i] + (l1 > T(0) ? grad.data[i] / l1 : T(0));
        dir = detail::sign_of(acc.data[i]);
      } else {
        dir = detail::sign_of(grad.data[i]);
      }
      p.data[i] = std::clamp(p.data[i] + T(alpha) * dir, T(0), T(1));
    }
  }
  {
    Graph<T> g;
    Var<T> obj = build(g, g.value(p), rng);
    res.objective.push_back(double(g.val(obj).data[0]));
  }
  res.patch = std::move(p);
  return res;
}

template <typename T>
Tensor<T> initial_patch(const Scene& scene) {
  return Tensor<T>::full({scene.anchor.h, scene.anchor.w, 3}, T(0.5));
}

// single-view objective: render one view, run the backbone from the zero
// belief, return the (un)targeted classification loss
template <typename T>
Var<T> single_view_objective(Graph<T>& g, Var<T> patch, const Scene& scene,
                             PerceptionModel<T>& model, const EnvConfig& env,
                             const CameraState& s, int target_class) {
  RenderMapping m =
      compute_mapping(scene.card, s, env.intr, env.radius, scene.texture.shape[0]);
  Var<T> tex = g.value(scene.texture.template cast<T>());
  Var<T> img = render<T>(g, tex, m, scene.anchor, patch, scene.background);
  Var<T> b = g.value(model.initial_belief());
  Var<T> logits = model.step(g, b, img).logits;
  if (target_class < 0) return cross_entropy_logits(logits, scene.label);
  return scale(cross_entropy_logits(logits, target_class), T(-1));
}

// projected gradient ascent, one fresh random in-bounds view per iteration
template <typename T>
AttackResult<T> pgd_patch(const Scene& scene, PerceptionModel<T>& model,
                          const EnvConfig& env, const AttackConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  return signed_ascent(
      initial_patch<T>(scene), cfg.iterations, cfg.alpha, false, 0.0, rng,
      [&](Graph<T>& g, Var<T> pv, Rng& r) {
        return single_view_objective(g, pv, scene, model, env,
                                     random_state(r, env.bounds), cfg.target_class);
      });
}

// single gradient step
template <typename T>
AttackResult<T> fgsm_patch(const Scene& scene, PerceptionModel<T>& model,
                           const EnvConfig& env, AttackConfig cfg) {
  cfg.iterations = 1;
  return pgd_patch(scene, model, env, cfg);
}

// momentum attack: g <- mu*g + grad/|grad|_1, step on sign(g)
template <typename T>
AttackResult<T> mim_patch(const Scene& scene, PerceptionModel<T>& model,
                          const EnvConfig& env, const AttackConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  return signed_ascent(
      initial_patch<T>(scene), cfg.iterations, cfg.alpha, true, cfg.momentum, rng,
      [&](Graph<T>& g, Var<T> pv, Rng& r) {
        return single_view_objective(g, pv, scene, model, env,
                                     random_state(r, env.bounds), cfg.target_class);
      });
}

// averages the gradient over eot_samples random views before each sign step
template <typename T>
AttackResult<T> eot_patch(const Scene& scene, PerceptionModel<T>& model,
                          const EnvConfig& env, const AttackConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  return signed_ascent(
      initial_patch<T>(scene), cfg.iterations, cfg.alpha, false, 0.0, rng,
      [&](Graph<T>& g, Var<T> pv, Rng& r) {
        Var<T> total = g.value(Tensor<T>::scalar(T(0)));
        for (int m = 0; m < cfg.eot_samples; ++m) {
          total = add(total,
                      single_view_objective(g, pv, scene, model, env,
                                            random_state(r, env.bounds),
                                            cfg.target_class));
        }
        return scale(total, T(1.0 / cfg.eot_samples));
      });
}

// Adaptive multi-step attack: trajectories under an i.i.d.-uniform action
// policy, maximizing the final-step loss through the unrolled belief
// recurrence. horizon counts observations, so horizon 1 degenerates to the
// expectation-over-views attack exactly (same sampling path).
template <typename T>
AttackResult<T> uniform_policy_patch(const Scene& scene, PerceptionModel<T>& model,
                          const EnvConfig& env, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.horizon < 1)
    throw std::invalid_argument("uniform_policy_patch: horizon must be >= 1");
  if (cfg.horizon > cfg.unroll_cap)
    throw std::invalid_argument("uniform_policy_patch: horizon " + std::to_string(cfg.horizon) +
                                " exceeds unroll cap " + std::to_string(cfg.unroll_cap));
  Rng rng(derive_seed(cfg.seed, 0));
  auto trajectory_loss = [&](Graph<T>& g, Var<T> pv, Rng& r) {
    CameraState s = random_state(r, env.bounds);
    Var<T> b = g.value(model.initial_belief());
    Var<T> logits{};
    for (int t = 0; t < cfg.horizon; ++t) {
      if (t > 0) s = transition(s, random_action(r, env.caps), env.bounds);
      RenderMapping m = compute_mapping(scene.card, s, env.intr, env.radius,
                                        scene.texture.shape[0]);
      Var<T> tex = g.value(scene.texture.template cast<T>());
      Var<T> img = render<T>(g, tex, m, scene.anchor, pv, scene.background);
      auto st = model.step(g, b, img);
      b = st.belief;
      logits = st.logits;
    }
    if (cfg.target_class < 0) return cross_entropy_logits(logits, scene.label);
    return scale(cross_entropy_logits(logits, cfg.target_class), T(-1));
  };
  return signed_ascent(
      initial_patch<T>(scene), cfg.iterations, cfg.alpha, false, 0.0, rng,
      [&](Graph<T>& g, Var<T> pv, Rng& r) {
        Var<T> total = g.value(Tensor<T>::scalar(T(0)));
        for (int m = 0; m < cfg.eot_samples; ++m)
          total = add(total, trajectory_loss(g, pv, r));
        return scale(total, T(1.0 / cfg.eot_samples));
      });
}

// --- offline patch bank ----------------------------------------------------

struct PatchProvenance {
  std::string kind;          // "pgd" or "noise"
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  int scene_index = -1;      // -1 for noise patches
};

struct PatchBank {
  std::vector<Tensor<float>> patches;
  std::vector<PatchProvenance> provenance;

  std::size_t size() const { return patches.size(); }
};

struct BankConfig {
  int bank_size = 32;
  double noise_frac = 0.10;   // fraction of Gaussian-noise patches
  double noise_std = 0.25;    // around mid-gray
  AttackConfig attack;        // defaults: PGD alpha=8/255, N=30
};

inline std::uint64_t bank_config_hash(const BankConfig& cfg) {
  std::string s = "n" + std::to_string(cfg.attack.iterations) + "_a" +
                  std::to_string(cfg.attack.alpha) + "_m" +
                  std::to_string(cfg.attack.eot_samples) + "_b" +
                  std::to_string(cfg.bank_size) + "_f" +
                  std::to_string(cfg.noise_frac);
  return fnv1a(s);
}

// PGD patches against the single-view backbone, scenes round-robin, with a
// deterministic tail of Gaussian-noise patches
inline PatchBank build_patch_bank(const std::vector<Scene>& dataset,
                                 PerceptionModel<float>& backbone,
                                 const EnvConfig& env, const BankConfig& cfg,
                                 std::uint64_t seed) {
  if (dataset.empty())
    throw std::invalid_argument("build_patch_bank: dataset must be non-empty");
  if (cfg.bank_size < 0)
    throw std::invalid_argument("build_patch_bank: bank_size must be >= 0");
  cfg.attack.validate();
  int n_noise = int(std::floor(cfg.noise_frac * cfg.bank_size));
  int n_pgd = cfg.bank_size - n_noise;
  std::uint64_t chash = bank_config_hash(cfg);
  PatchBank bank;
  for (int i = 0; i < n_pgd; ++i) {
    int scene_idx = i % int(dataset.size());
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(seed, std::uint64_t(i));
    AttackResult<float> r = pgd_patch(dataset[scene_idx], backbone, env, ac);
    bank.patches.push_back(std::move(r.patch));
    bank.provenance.push_back({"pgd", ac.seed, chash, scene_idx});
  }
  const Scene& shape_ref = dataset[0];
  for (int i = 0; i < n_noise; ++i) {
    std::uint64_t s = derive_seed(seed, std::uint64_t(n_pgd + i));
    Rng rng(s);
    Tensor<float> p({shape_ref.anchor.h, shape_ref.anchor.w, 3});
    for (auto& v : p.data)
      v = std::clamp(0.5f + float(cfg.noise_std * rng.normal()), 0.0f, 1.0f);
    bank.patches.push_back(std::move(p));
    bank.provenance.push_back({"noise", s, chash, -1});
  }
  return bank;
}

inline void save_patch_bank(const std::string& path, const PatchBank& bank) {
  Archive a;
  a.set_meta("format", "patch_bank");
  a.set_meta("count", std::to_string(bank.patches.size()));
  for (std::size_t i = 0; i < bank.patches.size(); ++i) {
    const auto& p = bank.patches[i];
    a.arrays.push_back({"patch." + std::to_string(i), p.shape, p.data});
    const auto& pr = bank.provenance[i];
    a.set_meta("kind." + std::to_string(i), pr.kind);
    a.set_meta("seed." + std::to_string(i), std::to_string(pr.seed));
    a.set_meta("confhash." + std::to_string(i), std::to_string(pr.config_hash));
    a.set_meta("scene." + std::to_string(i), std::to_string(pr.scene_index));
  }
  save_archive(path, a);
}

inline PatchBank load_patch_bank(const std::string& path) {
  Archive a = load_archive(path);
  const std::string* fmt = a.meta_value("format");
  if (!fmt || *fmt != "patch_bank")
    throw std::runtime_error("load_patch_bank: " + path + " is not a patch bank");
  const std::string* cnt = a.meta_value("count");
  if (!cnt) throw std::runtime_error("load_patch_bank: missing count");
  std::size_t n = std::stoul(*cnt);
  PatchBank bank;
  for (std::size_t i = 0; i < n; ++i) {
    std::string idx = std::to_string(i);
    const NamedArray* arr = a.find("patch." + idx);
    if (!arr) throw std::runtime_error("load_patch_bank: missing patch." + idx);
    Tensor<float> p(arr->shape);
    p.data = arr->data;
    bank.patches.push_back(std::move(p));
    PatchProvenance pr;
    if (const std::string* v = a.meta_value("kind." + idx)) pr.kind = *v;
    if (const std::string* v = a.meta_value("seed." + idx)) pr.seed = std::stoull(*v);
    if (const std::string* v = a.meta_value("confhash." + idx))
      pr.config_hash = std::stoull(*v);
    if (const std::string* v = a.meta_value("scene." + idx))
      pr.scene_index = std::stoi(*v);
    bank.provenance.push_back(std::move(pr));
  }
  return bank;
}

}  // namespace patchdef
