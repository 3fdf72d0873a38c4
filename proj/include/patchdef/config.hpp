#pragma once

// Experiment configuration: a flat [section] key=value text format with a
// fixed typed schema. Unknown keys are fatal (no silent typo defaults),
// overrides are applied as repeatable "section.key=value" strings, and the
// canonical serialization feeds a stable content hash stored in checkpoints.

#include <cstdint>
#include <string>
#include <vector>

#include "patchdef/attacks.hpp"
#include "patchdef/env.hpp"
#include "patchdef/perception.hpp"
#include "patchdef/policy.hpp"
#include "patchdef/scene.hpp"
#include "patchdef/trainer.hpp"

namespace patchdef {

struct ExperimentConfig {
  // [dataset]
  DatasetOptions dataset;
  std::uint64_t dataset_seed = 7;

  // [env]
  double h_min = -0.35, h_max = 0.35;
  double v_min = -0.25, v_max = 0.25;
  double cap_frac = 0.25;
  double radius = 2.2;
  int image_size = 32;
  double focal = 44.8;

  // [model]
  int d_e = 64;
  int d_b = 64;
  int nce_dim = 32;
  int policy_hidden = 32;
  double sigma_frac = 0.1;

  // [attack]
  std::string attack_method = "pgd";  // pgd | fgsm | mim | eot | uniform_policy
  AttackConfig attack;

  // [bank]
  BankConfig bank;

  // [train]
  TrainConfig train;
  std::string reward_mode = "uncertainty";  // uncertainty | entropy_deduction |
                                            // binary_outcome

  // [eval]
  int eval_episodes = 40;
  int eval_horizon = -1;                 // -1: use train.horizon; 0: single view
  std::string eval_mode = "final_step";  // final_step | uniform_steps
  std::string eval_attacks = "pgd";      // comma list of patch sources

  // [run]
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";

  // derived objects
  EnvConfig env() const;
  PerceptionConfig perception() const;
  PolicyConfig policy() const;
  TrainConfig train_config() const;  // train with the run seed folded in
  BankConfig bank_config() const;    // bank with the [attack] settings folded in

  void validate() const;
};

// parse the file (or raw text), apply "section.key=value" overrides in order
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides = {});

// fixed-order serialization of every field; equal configs produce equal text
std::string canonical_text(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

RewardMode parse_reward_mode(const std::string& name);
const char* reward_mode_name(RewardMode mode);

}  // namespace patchdef
