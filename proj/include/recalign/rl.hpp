// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "recalign/adam.hpp"
#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"
#include "recalign/policy.hpp"
#include "recalign/rewards.hpp"
#include "recalign/teacher.hpp"

namespace recalign {

struct RlConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double epsilon = 0.2;
  double critic_weight = 0.5;
  double entropy_weight = 0.01;
  double lr = 1e-3;
  double temperature = 0.7;
  int samples_per_instruction = 2;
  int instructions_per_step = 16;
  int max_steps = 3000;
  int ppo_epochs = 1;
  int validate_every = 250;
  bool normalize_advantages = true;  // batch whitening of GAE advantages
  std::uint64_t seed = 1;
  RewardConfig reward;

  void validate() const;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma * V_{t+1} - V_t with V_T = 0, A_t = sum_l (gamma*lambda)^l delta_{t+l}.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

struct Rollout {
  std::size_t input = 0;  // index into RolloutBatch::inputs
  Trajectory traj;
  std::vector<double> old_logprobs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct RolloutBatch {
  std::vector<PolicyInput> inputs;
  std::vector<Rollout> rollouts;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total_loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::size_t tokens = 0;
};

/// Clipped surrogate + critic_weight * MSE(values, returns) - entropy_weight * entropy,
/// all at the sampling temperature. A forced END is left out of the policy and
/// entropy terms. Accumulates the gradient into grad when given.
PpoStats ppo_loss(const Policy& policy, const RolloutBatch& batch, const RlConfig& config, std::vector<double>* grad);

/// One optimizer step on the loss above.
PpoStats ppo_update(Policy& policy, Adam& optimizer, const RolloutBatch& batch, const RlConfig& config);

/// Fills old_logprobs and values from the current policy.
void evaluate_rollouts(const Policy& policy, RolloutBatch& batch, double temperature);

struct RlLogEntry {
  int step = 0;
  double mean_r_list = 0.0;
  double illegal_rate = 0.0;
  double mean_kl = 0.0;
  double mean_length = 0.0;
  PpoStats ppo;
  std::optional<double> valid_control;
};

struct RlResult {
  Policy final_policy;
  Policy best_policy;
  int best_step = 0;
  double best_valid_control = 0.0;
  std::vector<RlLogEntry> log;
};

/// Mean control accuracy of greedy responses on I1/I2 samples.
double validation_control(const Policy& policy, const std::vector<InstructionSample>& samples, const Catalog& catalog);

/// RL stage: sample, reward, whiten, GAE, clipped update. The reference for
/// the KL penalty is the frozen starting policy.
RlResult rl_train(const Policy& start, const TeacherModel& teacher, const Catalog& catalog,
                  const std::vector<InstructionSample>& pool, const std::vector<InstructionSample>& valid,
                  const RlConfig& config, const std::function<void(const RlLogEntry&)>& on_step = {});

}  // namespace recalign
