#pragma once

// Dense rewards over recorded trajectories and generalized advantage
// estimation. The uncertainty-shaped reward telescopes: sum_t gamma^(t-1) r_t
// = L_0 - gamma^H L_H exactly, so return maximization is final-loss
// minimization.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "patchdef/rollout.hpp"

namespace patchdef {

enum class RewardMode { UncertaintyShaped, EntropyDeduction, BinaryOutcome };

// r_1..r_H from the recorded per-step statistics
inline std::vector<double> compute_rewards(const Trajectory& traj, RewardMode mode,
                                           double gamma, double kappa = 0.95) {
  if (traj.steps.size() < 2)
    throw std::invalid_argument("compute_rewards: trajectory needs at least 2 steps");
  if (mode == RewardMode::BinaryOutcome && (kappa <= 0.0 || kappa >= 1.0))
    throw std::invalid_argument("compute_rewards: kappa must lie in (0,1)");
  int H = traj.horizon();
  std::vector<double> r(std::size_t(H), 0.0);
  for (int t = 1; t <= H; ++t) {
    const StepRecord& prev = traj.steps[std::size_t(t - 1)];
    const StepRecord& cur = traj.steps[std::size_t(t)];
    double v = 0;
    switch (mode) {
      case RewardMode::UncertaintyShaped: v = prev.loss - gamma * cur.loss; break;
      case RewardMode::EntropyDeduction: v = prev.entropy - gamma * cur.entropy; break;
      case RewardMode::BinaryOutcome: v = cur.correct_prob > kappa ? 1.0 : 0.0; break;
    }
    if (!std::isfinite(v))
      throw std::invalid_argument("compute_rewards: non-finite reward from recorded fields");
    r[std::size_t(t - 1)] = v;
  }
  return r;
}

inline double discounted_return(const std::vector<double>& rewards, double gamma) {
  double ret = 0, w = 1;
  for (double r : rewards) {
    ret += w * r;
    w *= gamma;
  }
  return ret;
}

struct Advantages {
  std::vector<double> adv;     // A_1..A_H (adv[i] pairs with action a_i)
  std::vector<double> target;  // value targets for b_0..b_{H-1}
};

// delta_t = r_t + gamma*V(b_t) - V(b_{t-1});  A_t = sum_k (gamma*lam)^k delta_{t+k}
inline Advantages gae(const std::vector<double>& rewards,
                      const std::vector<double>& values, double gamma, double lam) {
  std::size_t H = rewards.size();
  if (values.size() != H + 1)
    throw std::invalid_argument("gae: need H+1 value estimates for H rewards");
  Advantages out;
  out.adv.assign(H, 0.0);
  out.target.assign(H, 0.0);
  double acc = 0.0;
  for (std::size_t i = H; i-- > 0;) {
    double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lam * acc;
    out.adv[i] = acc;
    out.target[i] = acc + values[i];
  }
  return out;
}

// zero-mean unit-variance normalization across every (trajectory, step) pair;
// degenerate spread (< 1e-8) leaves values centered only
inline void normalize_advantages(std::vector<Advantages>& batch) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& a : batch)
    for (double v : a.adv) {
      sum += v;
      ++n;
    }
  if (n == 0) return;
  double mean = sum / double(n);
  double var = 0;
  for (const auto& a : batch)
    for (double v : a.adv) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / double(n));
  for (auto& a : batch)
    for (double& v : a.adv) v = sd > 1e-8 ? (v - mean) / sd : v - mean;
}

}  // namespace patchdef
