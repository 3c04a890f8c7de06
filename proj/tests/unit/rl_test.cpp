// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracle/finite_diff.hpp"
#include "oracle/gae_oracle.hpp"
#include "recalign/rl.hpp"
#include "unit/world.hpp"

using namespace recalign;

namespace {

PolicyConfig tiny(const Catalog& c) {
  PolicyConfig pc;
  pc.n_items = c.num_items();
  pc.n_categories = c.num_categories();
  pc.dim = 6;
  pc.intent_dim = 4;
  pc.hidden = 10;
  pc.critic_hidden = 4;
  return pc;
}

RolloutBatch sampled_batch(const Policy& p, int n, std::uint64_t seed) {
  const auto& w = testing_world::world();
  Rng rng = make_stream({seed});
  RolloutBatch b;
  for (int i = 0; i < n; ++i) {
    PolicyInput in;
    in.history = {static_cast<ItemId>(i), static_cast<ItemId>(i + 7)};
    in.k = 1 + i % 4;
    in.intention = i % 2 ? Intention::item_wise(true, i % static_cast<int>(w.catalog.num_categories()))
                         : Intention::implicit();
    b.inputs.push_back(in);
    Rollout r;
    r.input = static_cast<std::size_t>(i);
    r.traj = sample_trajectory(p, in, 0.7, rng);
    b.rollouts.push_back(std::move(r));
  }
  evaluate_rollouts(p, b, 0.7);
  return b;
}

void fill_targets(RolloutBatch& b, double advantage, double ret) {
  for (auto& r : b.rollouts) {
    r.advantages.assign(r.traj.tokens.size(), advantage);
    r.returns.assign(r.traj.tokens.size(), ret);
  }
}

}  // namespace

TEST(Gae, OneStep) {
  const auto g = compute_gae(std::vector<double>{1.0}, std::vector<double>{0.0}, 0.99, 0.95);
  EXPECT_EQ(g.advantages[0], 1.0);
  EXPECT_EQ(g.returns[0], 1.0);
}

TEST(Gae, NoDiscount) {
  const std::vector<double> r = {0.3, -1.0, 2.0}, v = {0.5, 0.25, -0.75};
  const auto g = compute_gae(r, v, 0.0, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_EQ(g.advantages[t], r[t] - v[t]);
}

TEST(Gae, MatchesDoubleSum) {
  Rng rng = make_stream({21});
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> r(12), v(12);
  for (auto& x : r) x = n(rng);
  for (auto& x : v) x = n(rng);
  const auto got = compute_gae(r, v, 0.99, 0.95);
  const auto want = oracle::gae(r, v, 0.99, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) {
    EXPECT_NEAR(got.advantages[t], want[t], 1e-10);
    EXPECT_NEAR(got.returns[t], want[t] + v[t], 1e-10);
  }
}

TEST(Ppo, IdentityRatio) {
  const auto& w = testing_world::world();
  const Policy p = Policy::init(tiny(w.catalog));
  RolloutBatch b = sampled_batch(p, 6, 1);
  fill_targets(b, 0.0, 0.0);
  double sum = 0.0;
  std::size_t count = 0;
  Rng rng = make_stream({2});
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& r : b.rollouts)
    for (std::size_t t = 0; t < r.advantages.size(); ++t) {
      r.advantages[t] = n(rng);
      if (r.traj.forced_end && t + 1 == r.advantages.size()) continue;
      sum += r.advantages[t];
      ++count;
    }
  RlConfig cfg;
  const PpoStats s = ppo_loss(p, b, cfg, nullptr);
  EXPECT_NEAR(s.mean_ratio, 1.0, 1e-12);
  EXPECT_EQ(s.clip_fraction, 0.0);
  EXPECT_NEAR(s.policy_loss, -sum / static_cast<double>(count), 1e-12);
}

TEST(Ppo, ClippedTokensCarryNoPolicyGradient) {
  const auto& w = testing_world::world();
  const Policy p = Policy::init(tiny(w.catalog));
  RolloutBatch b = sampled_batch(p, 4, 3);
  fill_targets(b, 1.0, 0.0);
  // Old logprobs far below the current ones: rho > 1 + eps on every token.
  for (auto& r : b.rollouts)
    for (auto& lp : r.old_logprobs) lp -= 1.0;
  RlConfig cfg;
  cfg.entropy_weight = 0.0;
  cfg.critic_weight = 0.0;
  std::vector<double> grad(p.parameters().size(), 0.0);
  const PpoStats s = ppo_loss(p, b, cfg, &grad);
  EXPECT_GT(s.clip_fraction, 0.0);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(Ppo, ClippedObjectiveValue) {
  // Surrogate of one token with rho = 1.5, A = 1, eps = 0.2 is min(1.5, 1.2) = 1.2.
  const auto& w = testing_world::world();
  const Policy p = Policy::init(tiny(w.catalog));
  RolloutBatch b = sampled_batch(p, 1, 4);
  Rollout& r = b.rollouts[0];
  r.traj.tokens = {r.traj.tokens.back()};
  r.traj.forced_end = false;
  r.old_logprobs = {score_trajectory(p, b.inputs[0], r.traj, 0.7)[0] - std::log(1.5)};
  r.values = {0.0};
  fill_targets(b, 1.0, 0.0);
  RlConfig cfg;
  const PpoStats s = ppo_loss(p, b, cfg, nullptr);
  EXPECT_NEAR(s.mean_ratio, 1.5, 1e-12);
  EXPECT_NEAR(s.policy_loss, -1.2, 1e-12);
}

TEST(Ppo, GradientMatchesFiniteDifferences) {
  const auto& w = testing_world::world();
  Policy p = Policy::init(tiny(w.catalog));
  Policy behaviour = p;
  Rng rng = make_stream({5});
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& x : behaviour.parameters()) x += n(rng);
  RolloutBatch b = sampled_batch(behaviour, 5, 6);
  std::normal_distribution<double> u(0.0, 1.0);
  for (auto& r : b.rollouts) {
    r.advantages.resize(r.traj.tokens.size());
    r.returns.resize(r.traj.tokens.size());
    for (auto& a : r.advantages) a = u(rng);
    for (auto& x : r.returns) x = u(rng);
  }
  // The critic sees the actor's features through a stop-gradient, so actor
  // coordinates are checked with the value term off.
  RlConfig no_value;
  no_value.critic_weight = 0.0;
  const RlConfig full;
  for (const RlConfig* cfg : std::initializer_list<const RlConfig*>{&no_value, &full}) {
    std::vector<double> grad(p.parameters().size(), 0.0);
    ppo_loss(p, b, *cfg, &grad);
    std::vector<std::size_t> coords;
    if (cfg == &no_value)
      for (std::size_t i = 0; i < p.actor_size(); i += 7) coords.push_back(i);
    else
      for (std::size_t i = p.actor_size(); i < grad.size(); ++i) coords.push_back(i);
    const auto r = oracle::check_gradient(
        p.parameters(), [&] { return ppo_loss(p, b, *cfg, nullptr).total_loss; }, grad, coords);
    EXPECT_LT(r.max_rel_error, 1e-4) << "coordinate " << r.worst << ": analytic " << r.worst_analytic << ", numeric "
                                     << r.worst_numeric;
  }
}

TEST(RlTrain, EmptyPoolReturnsStart) {
  const auto& w = testing_world::world();
  const Policy p = Policy::init(tiny(w.catalog));
  RlConfig cfg;
  cfg.max_steps = 5;
  const RlResult r = rl_train(p, w.teacher, w.catalog, {}, {}, cfg);
  EXPECT_TRUE(r.final_policy == p);
  EXPECT_TRUE(r.best_policy == p);
}

TEST(RlTrain, DeterministicLog) {
  const auto& w = testing_world::world();
  const auto data = build_training_set(w.context(Stage::train), DatasetQuota{8, 8, 6, 0}, 3);
  const Policy p = Policy::init(tiny(w.catalog));
  RlConfig cfg;
  cfg.max_steps = 4;
  cfg.instructions_per_step = 4;
  cfg.validate_every = 2;
  const RlResult a = rl_train(p, w.teacher, w.catalog, data.samples, data.samples, cfg);
  const RlResult b = rl_train(p, w.teacher, w.catalog, data.samples, data.samples, cfg);
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].mean_r_list, b.log[i].mean_r_list);
    EXPECT_EQ(a.log[i].ppo.total_loss, b.log[i].ppo.total_loss);
    EXPECT_GE(a.log[i].ppo.clip_fraction, 0.0);
    EXPECT_LE(a.log[i].ppo.clip_fraction, 1.0);
    EXPECT_GE(a.log[i].ppo.entropy, 0.0);
  }
  EXPECT_TRUE(a.final_policy == b.final_policy);
  EXPECT_FALSE(a.final_policy == p);
}
