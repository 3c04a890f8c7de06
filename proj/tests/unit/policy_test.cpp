// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracle/finite_diff.hpp"
#include "recalign/errors.hpp"
#include "recalign/policy.hpp"
#include "unit/world.hpp"

using namespace recalign;

namespace {

PolicyConfig small_config(std::uint64_t seed = 3) {
  PolicyConfig pc;
  pc.n_items = 30;
  pc.n_categories = 4;
  pc.n_distractors = 1;
  pc.dim = 6;
  pc.intent_dim = 5;
  pc.hidden = 12;
  pc.critic_hidden = 5;
  pc.seed = seed;
  return pc;
}

PolicyInput some_input() {
  PolicyInput in;
  in.history = {3, 8, 21};
  in.intention = Intention::proportion(IntentionKind::I2_ge, 2, 0.4);
  in.k = 4;
  return in;
}

}  // namespace

TEST(Policy, LogSoftmaxNormalizes) {
  Eigen::VectorXd z(4);
  z << 1.0, -2.0, 0.5, 3.0;
  for (double t : {1.0, 0.7}) EXPECT_NEAR(log_softmax(z, t).array().exp().sum(), 1.0, 1e-12);
}

TEST(Policy, BatchedForwardMatchesStepwise) {
  const Policy p = Policy::init(small_config());
  const PolicyInput in = some_input();
  const std::vector<int> tokens = {5, 7, 30, p.end_token()};
  const auto batch = p.forward({&in}, {&tokens}, true);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::span<const int> prefix(tokens.data(), t);
    const Eigen::VectorXd step = p.next_logits(in, prefix);
    EXPECT_LT((batch.logits.col(static_cast<Eigen::Index>(t)) - step).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(batch.values(static_cast<Eigen::Index>(t)), p.next_value(in, prefix), 1e-12);
  }
}

TEST(Policy, SampledLogprobsMatchRescoring) {
  const Policy p = Policy::init(small_config());
  const PolicyInput in = some_input();
  Rng rng = make_stream({9});
  for (int i = 0; i < 20; ++i) {
    const Trajectory tr = sample_trajectory(p, in, 0.7, rng);
    const auto again = score_trajectory(p, in, tr, 0.7);
    ASSERT_EQ(again.size(), tr.logprobs.size());
    for (std::size_t t = 0; t < again.size(); ++t) EXPECT_NEAR(again[t], tr.logprobs[t], 1e-12);
  }
}

TEST(Policy, TwoSamplesPerInstruction) {
  const Policy p = Policy::init(small_config());
  Rng rng = make_stream({10});
  EXPECT_EQ(sample_response(p, some_input(), 0.7, 2, rng).size(), 2u);
}

TEST(Policy, LowTemperatureApproachesGreedy) {
  const Policy p = Policy::init(small_config());
  const PolicyInput in = some_input();
  Rng rng = make_stream({11});
  EXPECT_EQ(sample_trajectory(p, in, 1e-4, rng).tokens, greedy_decode(p, in).tokens);
}

TEST(Policy, CapForcesEnd) {
  Policy p = Policy::init(small_config());
  const PolicyInput in = some_input();
  // Locate END's output bias: the one coordinate with unit gradient when only
  // END's logit carries loss.
  const std::vector<int> one = {0};
  const auto batch = p.forward({&in}, {&one}, false);
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(p.vocab_size(), 1);
  dlogits(p.end_token(), 0) = 1.0;
  std::vector<double> grad(p.parameters().size(), 0.0);
  p.backward(batch, dlogits, nullptr, grad);
  std::size_t bias = 0;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (grad[i] == 1.0) bias = i;
  p.parameters()[bias] -= 1e3;

  const Trajectory g = greedy_decode(p, in);
  EXPECT_TRUE(g.forced_end);
  EXPECT_EQ(static_cast<int>(g.num_items()), in.k + 5);
  EXPECT_EQ(g.tokens.back(), p.end_token());
  EXPECT_EQ(g.logprobs.back(), 0.0);
}

TEST(Policy, KlAgainstItselfIsZero) {
  const Policy p = Policy::init(small_config());
  const Policy other = Policy::init(small_config(4));
  const PolicyInput in = some_input();
  Rng rng = make_stream({12});
  const Trajectory tr = sample_trajectory(p, in, 0.7, rng);
  const TokenKl self = logprobs_and_kl(p, p, in, tr, 0.7);
  ASSERT_EQ(self.kl.size(), tr.tokens.size());
  for (double v : self.kl) EXPECT_EQ(v, 0.0);
  const TokenKl kl = logprobs_and_kl(p, other, in, tr, 0.7);
  for (std::size_t t = 0; t < kl.kl.size(); ++t) EXPECT_NEAR(kl.kl[t], kl.logp[t] - kl.ref_logp[t], 1e-15);
  PolicyConfig bigger = small_config();
  bigger.n_items = 31;
  EXPECT_ANY_THROW(logprobs_and_kl(p, Policy::init(bigger), in, tr, 0.7));
}

TEST(Policy, ParseResponse) {
  const auto& w = testing_world::world();
  PolicyConfig pc = small_config();
  pc.n_items = w.catalog.num_items();
  pc.n_categories = w.catalog.num_categories();
  const Policy p = Policy::init(pc);
  const int end = p.end_token();
  const auto ab = parse_response(p, Trajectory{{4, 5, end}, {}, false}, w.catalog, {}, 2);
  ASSERT_EQ(ab.size(), 2u);
  EXPECT_EQ(ab.num_illegal(), 0);
  const auto aa = parse_response(p, Trajectory{{4, 4, end}, {}, false}, w.catalog, {}, 2);
  EXPECT_TRUE(aa.entries[1].has(IllegalReason::duplicate));
  const auto distractor = parse_response(p, Trajectory{{static_cast<int>(pc.n_items), end}, {}, false}, w.catalog, {}, 3);
  EXPECT_TRUE(distractor.entries[0].has(IllegalReason::nonexistent));
  EXPECT_EQ(distractor.size(), 1u);
}

TEST(Policy, SlGradientMatchesFiniteDifferences) {
  Policy p = Policy::init(small_config());
  std::vector<PolicyInput> inputs = {some_input(), some_input()};
  inputs[1].intention = Intention::item_wise(false, 1);
  inputs[1].history = {};
  const std::vector<std::vector<int>> targets = {label_tokens(p, {1, 2, 3, 4}), label_tokens(p, {9})};
  std::vector<double> grad(p.parameters().size(), 0.0);
  sl_loss(p, inputs, targets, &grad);
  for (std::size_t i = p.actor_size(); i < grad.size(); ++i) EXPECT_EQ(grad[i], 0.0);
  std::vector<std::size_t> coords(p.actor_size());
  std::iota(coords.begin(), coords.end(), 0);
  const auto r = oracle::check_gradient(p.parameters(), [&] { return sl_loss(p, inputs, targets, nullptr); }, grad, coords);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Policy, SlMemorizesOneSample) {
  const auto& w = testing_world::world();
  PolicyConfig pc;
  pc.n_items = w.catalog.num_items();
  pc.n_categories = w.catalog.num_categories();
  pc.dim = 16;
  pc.intent_dim = 8;
  pc.hidden = 32;
  pc.critic_hidden = 8;
  InstructionSample s;
  s.history = {1, 2, 3};
  s.k = 3;
  s.labels = {10, 20, 30};
  s.ground_truth = 10;
  SlConfig sc;
  sc.epochs = 300;
  sc.lr = 1e-2;
  Policy a = Policy::init(pc);
  Policy b = Policy::init(pc);
  sl_train(a, {s}, {}, sc);
  sl_train(b, {s}, {}, sc);
  EXPECT_TRUE(a == b);
  const Trajectory g = greedy_decode(a, policy_input(s));
  EXPECT_EQ(g.tokens, label_tokens(a, s.labels));
  EXPECT_THROW(sl_train(a, {}, {}, sc), ArgumentError);
}

TEST(Policy, SlKeepsTheBestValidationEpoch) {
  const auto& w = testing_world::world();
  const auto train = build_training_set(w.context(Stage::train), DatasetQuota{30, 20, 20, 0}, 4).samples;
  const auto valid = build_training_set(w.context(Stage::valid), DatasetQuota{10, 10, 10, 0}, 5).samples;
  PolicyConfig pc;
  pc.n_items = w.catalog.num_items();
  pc.n_categories = w.catalog.num_categories();
  pc.dim = 8;
  pc.intent_dim = 4;
  pc.hidden = 16;
  pc.critic_hidden = 4;
  SlConfig sc;
  sc.epochs = 12;
  sc.lr = 3e-2;
  Policy best = Policy::init(pc);
  const SlLog log = sl_train(best, train, valid, sc);
  ASSERT_EQ(log.valid_loss.size(), 12u);
  const auto lowest = std::min_element(log.valid_loss.begin(), log.valid_loss.end());
  EXPECT_EQ(log.best_epoch, lowest - log.valid_loss.begin());
  EXPECT_NEAR(sl_loss(best, valid), *lowest, 1e-12);

  sc.keep_best = false;
  Policy last = Policy::init(pc);
  const SlLog all = sl_train(last, train, valid, sc);
  EXPECT_EQ(all.best_epoch, -1);
  EXPECT_NEAR(sl_loss(last, valid), all.valid_loss.back(), 1e-12);
}

TEST(Policy, SaveLoadRoundTrip) {
  const auto dir = testing_world::temp_dir("policy_io");
  const Policy p = Policy::init(small_config());
  p.save(dir / "p.json");
  EXPECT_TRUE(Policy::load(dir / "p.json") == p);
}
