// SPDX-License-Identifier: Apache-2.0
#include "recalign/rl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "recalign/errors.hpp"
#include "recalign/metrics.hpp"

namespace recalign {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void RlConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ArgumentError("gamma must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
  if (!(lr > 0.0)) throw ArgumentError("learning rate must be positive");
  if (samples_per_instruction < 1 || instructions_per_step < 1 || max_steps < 0 || ppo_epochs < 1)
    throw ArgumentError("invalid rollout sizes");
  reward.validate();
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda) {
  if (rewards.size() != values.size()) throw ArgumentError("compute_gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  GaeResult g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next - values[i];
    running = delta + gamma * lambda * running;
    g.advantages[i] = running;
    g.returns[i] = running + values[i];
  }
  return g;
}

namespace {

Policy::Batch forward_rollouts(const Policy& policy, const RolloutBatch& batch, bool critic) {
  std::vector<const PolicyInput*> in;
  std::vector<const std::vector<int>*> tok;
  for (const auto& r : batch.rollouts) {
    in.push_back(&batch.inputs.at(r.input));
    tok.push_back(&r.traj.tokens);
  }
  return policy.forward(std::move(in), std::move(tok), critic);
}

bool is_forced(const Rollout& r, int t) {
  return r.traj.forced_end && static_cast<std::size_t>(t) + 1 == r.traj.tokens.size();
}

}  // namespace

void evaluate_rollouts(const Policy& policy, RolloutBatch& batch, double temperature) {
  const auto fw = forward_rollouts(policy, batch, true);
  for (auto& r : batch.rollouts) {
    r.old_logprobs.assign(r.traj.tokens.size(), 0.0);
    r.values.assign(r.traj.tokens.size(), 0.0);
  }
  for (Eigen::Index s = 0; s < fw.logits.cols(); ++s) {
    const auto [i, t] = fw.steps[static_cast<std::size_t>(s)];
    auto& r = batch.rollouts[static_cast<std::size_t>(i)];
    r.values[static_cast<std::size_t>(t)] = fw.values[s];
    if (!is_forced(r, t))
      r.old_logprobs[static_cast<std::size_t>(t)] =
          log_softmax(fw.logits.col(s), temperature)[r.traj.tokens[static_cast<std::size_t>(t)]];
  }
}

PpoStats ppo_loss(const Policy& policy, const RolloutBatch& batch, const RlConfig& config, std::vector<double>* grad) {
  const auto fw = forward_rollouts(policy, batch, true);
  const auto S = fw.logits.cols();
  PpoStats st;
  if (S == 0) return st;
  const double T = config.temperature, eps = config.epsilon;
  std::size_t np = 0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = fw.steps[static_cast<std::size_t>(s)];
    if (!is_forced(batch.rollouts[static_cast<std::size_t>(i)], t)) ++np;
  }
  const double inv_np = np ? 1.0 / static_cast<double>(np) : 0.0;
  const double inv_s = 1.0 / static_cast<double>(S);
  MatrixXd dz = MatrixXd::Zero(fw.logits.rows(), S);
  VectorXd dv(S);
  double clipped = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = fw.steps[static_cast<std::size_t>(s)];
    const Rollout& r = batch.rollouts[static_cast<std::size_t>(i)];
    const auto ti = static_cast<std::size_t>(t);
    const double v = fw.values[s];
    const double err = v - r.returns.at(ti);
    st.value_loss += err * err * inv_s;
    dv[s] = config.critic_weight * 2.0 * err * inv_s;
    if (is_forced(r, t)) continue;

    const VectorXd lp = log_softmax(fw.logits.col(s), T);
    const VectorXd p = lp.array().exp();
    const int a = r.traj.tokens[ti];
    const double ratio = std::exp(lp[a] - r.old_logprobs.at(ti));
    const double adv = r.advantages.at(ti);
    const double unclipped = ratio * adv;
    const double clipped_obj = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    st.policy_loss -= std::min(unclipped, clipped_obj) * inv_np;
    st.mean_ratio += ratio * inv_np;
    if (std::abs(ratio - 1.0) > eps) clipped += 1.0;
    const double h = -(p.array() * lp.array()).sum();
    st.entropy += h * inv_np;
    if (grad) {
      // d/dz of -min(.) through log pi(a), then of -w_ent * H.
      const double g = unclipped <= clipped_obj ? -adv * ratio * inv_np : 0.0;
      auto col = dz.col(s);
      col = (config.entropy_weight * inv_np / T) * (p.array() * (lp.array() + h)).matrix();
      col -= (g / T) * p;
      col[a] += g / T;
    }
  }
  st.tokens = np;
  st.clip_fraction = np ? clipped / static_cast<double>(np) : 0.0;
  st.total_loss = st.policy_loss + config.critic_weight * st.value_loss - config.entropy_weight * st.entropy;
  if (!std::isfinite(st.total_loss)) {
    std::ostringstream msg;
    msg << "non-finite PPO loss: policy " << st.policy_loss << ", value " << st.value_loss << ", entropy "
        << st.entropy << ", mean ratio " << st.mean_ratio;
    throw std::runtime_error(msg.str());
  }
  if (grad) policy.backward(fw, dz, &dv, *grad);
  return st;
}

PpoStats ppo_update(Policy& policy, Adam& optimizer, const RolloutBatch& batch, const RlConfig& config) {
  std::vector<double> grad(policy.parameters().size(), 0.0);
  const PpoStats st = ppo_loss(policy, batch, config, &grad);
  optimizer.step(policy.parameters(), grad);
  return st;
}

double validation_control(const Policy& policy, const std::vector<InstructionSample>& samples, const Catalog& catalog) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    const auto traj = greedy_decode(policy, policy_input(s));
    const auto list = parse_response(policy, traj, catalog, s.history, s.k);
    if (const auto acc = control_accuracy(list, s.intention, catalog)) {
      sum += *acc;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

RlResult rl_train(const Policy& start, const TeacherModel& teacher, const Catalog& catalog,
                  const std::vector<InstructionSample>& pool, const std::vector<InstructionSample>& valid,
                  const RlConfig& config, const std::function<void(const RlLogEntry&)>& on_step) {
  config.validate();
  if (teacher.num_items() != catalog.num_items()) throw ArgumentError("teacher and catalog sizes differ");
  if (start.config().n_items != catalog.num_items()) throw ArgumentError("policy and catalog sizes differ");
  for (const auto& s : pool) {
    if (s.intention.kind == IntentionKind::I3 || s.intention.kind == IntentionKind::Combo || !s.ground_truth)
      throw ArgumentError("RL instructions must be I0, I1 or I2 samples with a ground truth");
  }
  RlResult result{start, start, 0, 0.0, {}};
  if (pool.empty() || config.max_steps == 0) return result;

  const Policy& reference = start;
  Policy& policy = result.final_policy;
  Adam adam(policy.parameters().size(), config.lr);
  std::vector<std::optional<std::vector<int>>> ranks(pool.size());
  if (!valid.empty()) result.best_valid_control = validation_control(policy, valid, catalog);

  for (int step = 1; step <= config.max_steps; ++step) {
    Rng rng = make_stream({config.seed, 0x726cULL, static_cast<std::uint64_t>(step)});
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    RolloutBatch batch;
    std::vector<RewardBreakdown> breakdowns;
    std::size_t illegal = 0, entries = 0;
    for (int b = 0; b < config.instructions_per_step; ++b) {
      const std::size_t idx = pick(rng);
      const auto& s = pool[idx];
      if (!ranks[idx]) ranks[idx] = teacher.predict_full_ranking(s.history).rank_of;
      batch.inputs.push_back(policy_input(s));
      for (auto& traj :
           sample_response(policy, batch.inputs.back(), config.temperature, config.samples_per_instruction, rng)) {
        Rollout r;
        r.input = batch.inputs.size() - 1;
        r.traj = std::move(traj);
        const ParsedList list = parse_response(policy, r.traj, catalog, s.history, s.k);
        illegal += list.num_illegal();
        entries += list.size();
        breakdowns.push_back(compute_rewards(list, s.intention, s.ground_truth, *ranks[idx], catalog,
                                             config.reward.alpha));
        batch.rollouts.push_back(std::move(r));
      }
    }

    evaluate_rollouts(policy, batch, config.temperature);
    RolloutBatch ref_view;  // reference log-probs via the same batched path
    ref_view.inputs = batch.inputs;
    ref_view.rollouts = batch.rollouts;
    evaluate_rollouts(reference, ref_view, config.temperature);

    RlLogEntry entry;
    entry.step = step;
    std::vector<std::vector<double>> rewards;
    double kl_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
      const Rollout& r = batch.rollouts[i];
      std::vector<double> kl(r.traj.tokens.size());
      for (std::size_t t = 0; t < kl.size(); ++t) kl[t] = r.old_logprobs[t] - ref_view.rollouts[i].old_logprobs[t];
      for (double v : kl) kl_sum += v;
      tokens += kl.size();
      rewards.push_back(
          assemble_token_rewards(r.traj.layout(), breakdowns[i].r_item, breakdowns[i].r_list, kl, config.reward));
      entry.mean_r_list += breakdowns[i].r_list;
      entry.mean_length += static_cast<double>(r.traj.num_items());
    }
    if (config.reward.whitening) whiten(rewards);
    for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
      Rollout& r = batch.rollouts[i];
      r.rewards = std::move(rewards[i]);
      auto g = compute_gae(r.rewards, r.values, config.gamma, config.lambda);
      r.advantages = std::move(g.advantages);
      r.returns = std::move(g.returns);
    }
    if (config.normalize_advantages) {
      std::vector<std::vector<double>> adv;
      for (const auto& r : batch.rollouts) adv.push_back(r.advantages);
      whiten(adv);
      for (std::size_t i = 0; i < batch.rollouts.size(); ++i) batch.rollouts[i].advantages = std::move(adv[i]);
    }
    for (int e = 0; e < config.ppo_epochs; ++e) entry.ppo = ppo_update(policy, adam, batch, config);

    const double n_roll = static_cast<double>(batch.rollouts.size());
    entry.mean_r_list /= n_roll;
    entry.mean_length /= n_roll;
    entry.illegal_rate = entries ? static_cast<double>(illegal) / static_cast<double>(entries) : 0.0;
    entry.mean_kl = tokens ? kl_sum / static_cast<double>(tokens) : 0.0;
    if (!valid.empty() && config.validate_every > 0 && (step % config.validate_every == 0 || step == config.max_steps)) {
      entry.valid_control = validation_control(policy, valid, catalog);
      if (*entry.valid_control > result.best_valid_control) {
        result.best_valid_control = *entry.valid_control;
        result.best_policy = policy;
        result.best_step = step;
      }
    }
    if (on_step) on_step(entry);
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace recalign
