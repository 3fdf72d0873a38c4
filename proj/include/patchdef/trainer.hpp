#pragma once

// Joint training: PPO-Clip on the policy/value head, supervised multi-step
// updates on the perception stack, the offline (uniform-policy, supervised)
// pretraining phase, and the online loop that alternates collection and
// updates while logging per-iteration metrics.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "patchdef/attacks.hpp"
#include "patchdef/rewards.hpp"
#include "patchdef/rollout.hpp"

namespace patchdef {

struct TrainConfig {
  int horizon = 4;                  // H
  double gamma = 0.95;              // return attenuation
  double lambda_entropy = 0.1;      // entropy coefficient in the perception loss
  double clip_eps = 0.2;            // PPO clip
  int epochs = 2;                   // update passes per iteration (E)
  int iterations = 40;              // online iterations (M)
  int episodes_per_iter = 16;
  int minibatch = 8;
  double lr_offline = 1e-3;
  double lr_online = 2.5e-4;
  double gae_lambda = 0.95;
  double r_patch = 0.4;             // fraction of patched episodes
  RewardMode reward_mode = RewardMode::UncertaintyShaped;
  double kappa = 0.95;              // BinaryOutcome threshold
  bool entropy_final_only = false;  // entropy term at t=H only
  int offline_episodes = 64;
  int offline_epochs = 10;
  double noise_patch_std = 0.25;    // fallback patches when the bank is empty
  std::uint64_t seed = 0;

  void validate() const {
    if (horizon < 1 || horizon > kMaxHorizon)
      throw std::invalid_argument("train: horizon outside [1," +
                                  std::to_string(kMaxHorizon) + "]");
    if (gamma <= 0.0 || gamma > 1.0)
      throw std::invalid_argument("train: gamma must lie in (0,1]");
    if (clip_eps <= 0.0 || clip_eps >= 1.0)
      throw std::invalid_argument("train: clip_eps must lie in (0,1)");
    if (lambda_entropy < 0.0)
      throw std::invalid_argument("train: lambda_entropy must be >= 0");
    if (reward_mode == RewardMode::BinaryOutcome && (kappa <= 0.0 || kappa >= 1.0))
      throw std::invalid_argument("train: kappa must lie in (0,1)");
    if (epochs < 1 || minibatch < 1 || episodes_per_iter < 1)
      throw std::invalid_argument("train: epochs/minibatch/episodes must be >= 1");
    if (r_patch < 0.0 || r_patch > 1.0)
      throw std::invalid_argument("train: r_patch must lie in [0,1]");
  }
};

// episode patch draw: clean with prob 1-r_patch; else uniform from the bank,
// or fresh Gaussian noise when the bank is empty
inline std::optional<std::pair<Tensor<float>, int>> draw_patch(
    Rng& rng, const PatchBank& bank, const PatchAnchor& anchor, double r_patch,
    double noise_std) {
  if (rng.uniform() >= r_patch) return std::nullopt;
  if (!bank.patches.empty()) {
    std::size_t i = rng.uniform_int(bank.patches.size());
    return std::pair{bank.patches[i], int(i)};
  }
  Tensor<float> p({anchor.h, anchor.w, 3});
  for (auto& v : p.data)
    v = std::clamp(0.5f + float(noise_std * rng.normal()), 0.0f, 1.0f);
  return std::pair{std::move(p), -2};  // -2: ad-hoc noise patch
}

// --- update steps -----------------------------------------------------------

struct PpoStats {
  double objective = 0.0;  // clipped-surrogate value at the pre-step parameters
  double value_loss = 0.0;
  int dropped = 0;         // trajectories discarded for non-finite ratios
};

// One ascent step on (1/|B|) sum_traj sum_t min(R*A, clip(R,1-eps,1+eps)*A)
// minus the folded critic loss 0.5*(V(b)-target)^2. Gradients flow through
// recorded beliefs only (the policy reads frozen rollout beliefs).
template <typename T>
PpoStats ppo_update(PolicyModel<T>& policy,
                    const std::vector<const Trajectory*>& batch,
                    const std::vector<const Advantages*>& advs, double clip_eps,
                    SgdMomentum<T>& opt) {
  if (batch.empty()) return {};
  PpoStats stats;
  policy.params().zero_grad();
  double inv_b = 1.0 / double(batch.size());
  auto sigma = policy.config().sigma();
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Trajectory& traj = *batch[bi];
    const Advantages& adv = *advs[bi];
    int H = traj.horizon();
    Graph<T> g;
    Var<T> loss = g.value(Tensor<T>::scalar(T(0)));
    bool bad = false;
    double obj_traj = 0, vloss_traj = 0;
    for (int t = 0; t < H && !bad; ++t) {
      const StepRecord& st = traj.steps[std::size_t(t)];
      Var<T> b = g.value(st.belief.template cast<T>());
      Var<T> lp = gaussian_logprob(g, policy.mean_var(g, b), st.raw_action, sigma);
      Var<T> ratio = exp_(add_const(lp, T(-st.log_prob)));
      double rv = double(g.val(ratio).data[0]);
      if (!std::isfinite(rv)) {
        bad = true;
        break;
      }
      T a = T(adv.adv[std::size_t(t)]);
      Var<T> surr = minimum(scale(ratio, a),
                            scale(clamp(ratio, T(1.0 - clip_eps), T(1.0 + clip_eps)), a));
      loss = sub(loss, surr);
      Var<T> v = policy.value_var(g, b);
      Var<T> diff = add_const(v, T(-adv.target[std::size_t(t)]));
      Var<T> vloss = scale(mul(diff, diff), T(0.5));
      loss = add(loss, vloss);
      obj_traj += double(g.val(surr).data[0]);
      vloss_traj += double(g.val(vloss).data[0]);
    }
    if (bad) {
      ++stats.dropped;
      continue;
    }
    stats.objective += inv_b * obj_traj;
    stats.value_loss += inv_b * vloss_traj;
    g.backward(scale(loss, T(inv_b)));
  }
  opt.step(policy.params());
  return stats;
}

// One descent step on (1/|B|) sum_traj sum_t [CE(y_t, y) + lambda*H(y_t)],
// rebuilding the belief chain from stored observations so gradients pass
// through every fusion. Returns the mean supervised objective it descended.
template <typename T>
double percep_update(PerceptionModel<T>& perception,
                     const std::vector<const Trajectory*>& batch, double lambda,
                     bool entropy_final_only, SgdMomentum<T>& opt) {
  if (batch.empty()) return 0.0;
  perception.params().zero_grad();
  double inv_b = 1.0 / double(batch.size());
  double total = 0.0;
  for (const Trajectory* tp : batch) {
    const Trajectory& traj = *tp;
    int H = traj.horizon();
    Graph<T> g;
    Var<T> b = g.value(perception.initial_belief());
    Var<T> obj = g.value(Tensor<T>::scalar(T(0)));
    for (int t = 0; t <= H; ++t) {
      auto st = perception.step(g, b, g.value(traj.steps[std::size_t(t)].obs.cast<T>()));
      b = st.belief;
      obj = add(obj, cross_entropy_logits(st.logits, traj.label));
      if (lambda > 0.0 && (!entropy_final_only || t == H))
        obj = add(obj, scale(entropy_logits(st.logits), T(lambda)));
    }
    total += inv_b * double(g.val(obj).data[0]);
    g.backward(scale(obj, T(inv_b)));
  }
  opt.step(perception.params());
  return total;
}

// --- offline phase ----------------------------------------------------------

struct OfflineResult {
  std::vector<double> epoch_loss;  // mean per-trajectory objective per epoch
  int episodes_collected = 0;
};

// Supervised pretraining on uniform-random-action trajectories, mixed
// clean/patched. Aborts if the loss diverges (>10x the first epoch for three
// consecutive epochs). The policy is untouched.
template <typename T>
OfflineResult offline_pretrain(PerceptionModel<T>& perception,
                               const std::vector<Scene>& dataset,
                               const PatchBank& bank, const EnvConfig& env,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty())
    throw std::invalid_argument("offline_pretrain: dataset must be non-empty");
  OfflineResult res;
  if (cfg.offline_epochs == 0) return res;

  Rng rng(derive_seed(cfg.seed, 11));
  std::vector<Trajectory> episodes;
  for (int i = 0; i < cfg.offline_episodes; ++i) {
    const Scene& sc = dataset[rng.uniform_int(dataset.size())];
    auto patch = draw_patch(rng, bank, sc.anchor, cfg.r_patch, cfg.noise_patch_std);
    episodes.push_back(uniform_rollout(perception, env, sc,
                                       patch ? &patch->first : nullptr,
                                       patch ? patch->second : -1, cfg.horizon,
                                       derive_seed(cfg.seed, 1000 + std::uint64_t(i))));
  }
  res.episodes_collected = int(episodes.size());

  SgdMomentum<T> opt(cfg.lr_offline, 0.9);
  int high = 0;
  for (int e = 0; e < cfg.offline_epochs; ++e) {
    std::vector<std::size_t> order(episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);

    double epoch_total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.minibatch)) {
      std::vector<const Trajectory*> mb;
      for (std::size_t i = start;
           i < std::min(order.size(), start + std::size_t(cfg.minibatch)); ++i)
        if (episodes[order[i]].valid) mb.push_back(&episodes[order[i]]);
      if (mb.empty()) continue;
      epoch_total += percep_update(perception, mb, cfg.lambda_entropy,
                                   cfg.entropy_final_only, opt);
      ++batches;
    }
    double epoch_loss = batches ? epoch_total / batches : 0.0;
    res.epoch_loss.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error(
          "offline_pretrain: diverged, epoch loss is non-finite (epoch " +
          std::to_string(e) + ")");
    high = epoch_loss > 10.0 * res.epoch_loss.front() ? high + 1 : 0;
    if (high >= 3)
      throw std::runtime_error(
          "offline_pretrain: diverged, epoch loss " + std::to_string(epoch_loss) +
          " exceeds 10x initial " + std::to_string(res.epoch_loss.front()) +
          " for 3 consecutive epochs (epoch " + std::to_string(e) + ")");
  }
  return res;
}

// --- online phase -----------------------------------------------------------

struct IterationMetrics {
  int iteration = 0;
  double mean_return = 0;
  double clean_acc = 0;
  double patched_acc = 0;
  double mean_final_loss = 0;
  double mean_entropy = 0;
  double wallclock_s = 0;
};

inline constexpr const char* kMetricsHeader =
    "iteration,mean_return,clean_acc,patched_acc,mean_final_loss,mean_entropy,"
    "wallclock_s";

inline void append_metrics_csv(const std::string& path, const IterationMetrics& m) {
  bool fresh = !std::ifstream(path).good();
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot open metrics log " + path);
  if (fresh) f << kMetricsHeader << "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f",
                m.iteration, m.mean_return, m.clean_acc, m.patched_acc,
                m.mean_final_loss, m.mean_entropy, m.wallclock_s);
  f << buf << "\n";
}

struct OnlineResult {
  std::vector<IterationMetrics> metrics;
  int invalid_episodes = 0;
  int dropped_elements = 0;
};

// Alternates rollout collection with E epochs of minibatched PPO + perception
// updates. Refuses to run before offline pretraining unless explicitly
// overridden (the curriculum is offline -> online).
template <typename T>
OnlineResult online_train(PerceptionModel<T>& perception, PolicyModel<T>& policy,
                          const std::vector<Scene>& dataset, const PatchBank& bank,
                          const EnvConfig& env, const TrainConfig& cfg,
                          bool offline_done, bool allow_without_offline = false,
                          const std::string& metrics_path = "",
                          const std::function<void(int)>& on_iteration = nullptr) {
  cfg.validate();
  if (!offline_done && !allow_without_offline)
    throw std::runtime_error(
        "online_train: perception has not been pretrained offline; the "
        "curriculum trains it independently first (pass the override to skip)");
  if (dataset.empty())
    throw std::invalid_argument("online_train: dataset must be non-empty");

  OnlineResult res;
  Rng rng(derive_seed(cfg.seed, 23));
  SgdMomentum<T> opt_pi(cfg.lr_online, 0.9);
  SgdMomentum<T> opt_f(cfg.lr_online, 0.9);

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<Trajectory> episodes;
    std::vector<Advantages> advs;
    for (int i = 0; i < cfg.episodes_per_iter; ++i) {
      const Scene& sc = dataset[rng.uniform_int(dataset.size())];
      auto patch = draw_patch(rng, bank, sc.anchor, cfg.r_patch, cfg.noise_patch_std);
      std::uint64_t es =
          derive_seed(cfg.seed, 50000 + std::uint64_t(iter) * 1024 + std::uint64_t(i));
      Trajectory tr = rollout(perception, policy, env, sc,
                              patch ? &patch->first : nullptr,
                              patch ? patch->second : -1, cfg.horizon, es, true);
      if (!tr.valid) {
        ++res.invalid_episodes;
        continue;
      }
      episodes.push_back(std::move(tr));
    }

    IterationMetrics m;
    m.iteration = iter;
    int clean_n = 0, clean_ok = 0, patched_n = 0, patched_ok = 0;
    for (const Trajectory& tr : episodes) {
      std::vector<double> rewards =
          compute_rewards(tr, cfg.reward_mode, cfg.gamma, cfg.kappa);
      m.mean_return += discounted_return(rewards, cfg.gamma);
      std::vector<double> values;
      for (const StepRecord& st : tr.steps) values.push_back(st.value);
      advs.push_back(gae(rewards, values, cfg.gamma, cfg.gae_lambda));
      const StepRecord& fin = tr.steps.back();
      m.mean_final_loss += fin.loss;
      m.mean_entropy += fin.entropy;
      bool ok = fin.prediction == tr.label;
      if (tr.patch_index == -1) {
        ++clean_n;
        clean_ok += ok;
      } else {
        ++patched_n;
        patched_ok += ok;
      }
    }
    double n = double(episodes.size());
    if (n > 0) {
      m.mean_return /= n;
      m.mean_final_loss /= n;
      m.mean_entropy /= n;
    }
    m.clean_acc = clean_n ? double(clean_ok) / clean_n : std::nan("");
    m.patched_acc = patched_n ? double(patched_ok) / patched_n : std::nan("");

    normalize_advantages(advs);

    for (int e = 0; e < cfg.epochs; ++e) {
      std::vector<std::size_t> order(episodes.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
      for (std::size_t start = 0; start < order.size();
           start += std::size_t(cfg.minibatch)) {
        std::vector<const Trajectory*> mb;
        std::vector<const Advantages*> ma;
        for (std::size_t i = start;
             i < std::min(order.size(), start + std::size_t(cfg.minibatch)); ++i) {
          mb.push_back(&episodes[order[i]]);
          ma.push_back(&advs[order[i]]);
        }
        if (mb.empty()) continue;
        PpoStats ps = ppo_update(policy, mb, ma, cfg.clip_eps, opt_pi);
        res.dropped_elements += ps.dropped;
        percep_update(perception, mb, cfg.lambda_entropy, cfg.entropy_final_only,
                      opt_f);
      }
    }

    m.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.metrics.push_back(m);
    if (!metrics_path.empty()) append_metrics_csv(metrics_path, m);
    if (on_iteration) on_iteration(iter);
  }
  return res;
}

}  // namespace patchdef
