// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "recalign/errors.hpp"
#include "recalign/rewards.hpp"

using namespace recalign;

namespace {

// Items 0-9 in category 0 ("In"), 10-29 in category 1 ("Out").
const Catalog& two_way() {
  static const Catalog c = [] {
    std::vector<Item> items;
    for (int i = 0; i < 30; ++i)
      items.push_back({i, "e" + std::to_string(i), "Item " + std::to_string(i), {i < 10 ? 0 : 1}});
    return Catalog(items, {"In", "Out"}, {});
  }();
  return c;
}

std::vector<int> identity_ranks() {
  std::vector<int> r(two_way().num_items());
  std::iota(r.begin(), r.end(), 1);
  return r;
}

}  // namespace

TEST(Legality, Rules) {
  const Catalog& c = two_way();
  const auto dup = judge_legality(std::vector<ItemId>{3, 3}, 2, {}, c);
  EXPECT_TRUE(dup.entries[0].legal());
  EXPECT_TRUE(dup.entries[1].has(IllegalReason::duplicate));

  const auto hist = judge_legality(std::vector<ItemId>{5}, 1, {5}, c);
  EXPECT_TRUE(hist.entries[0].has(IllegalReason::in_history));

  const auto over = judge_legality(std::vector<ItemId>{1, 2, 3, 4}, 3, {}, c);
  EXPECT_TRUE(over.entries[3].has(IllegalReason::over_k));
  EXPECT_EQ(over.num_illegal(), 1);

  const auto ghost = judge_titles({"Item 1", "No Such Title"}, 2, {}, c);
  EXPECT_TRUE(ghost.entries[0].legal());
  EXPECT_TRUE(ghost.entries[1].has(IllegalReason::nonexistent));
}

TEST(PreferenceScores, Cases) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{0, 1, 2, 2}, 4, {}, c);
  const std::vector<int> ranks = {1, 5, 17, 17};
  const auto s = preference_scores(list, ranks, ItemId{2});
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 1.0 / 3.0);
  EXPECT_EQ(s[2], 1.0);
  EXPECT_EQ(s[3], -1.0);
}

TEST(ControlScores, ItemWise) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{1, 12, 1}, 3, {}, c);
  const std::vector<double> scores(3, 0.0);
  const auto got = control_scores(list, 3, Intention::item_wise(true, 0), scores, c);
  EXPECT_EQ(got.scores, (std::vector<double>{1, 0, -1}));
}

TEST(ControlScores, AtMostTwentyPercentRunsOutOfSlack) {
  const Catalog& c = two_way();
  std::vector<ItemId> items;
  for (int i = 0; i < 9; ++i) items.push_back(10 + i);
  const auto list = judge_legality(items, 10, {}, c);
  const std::vector<double> scores(items.size(), 0.0);
  const auto got = control_scores(list, 10, Intention::proportion(IntentionKind::I2_le, 0, 0.2), scores, c);
  EXPECT_EQ(got.scores[7], 1.0);
  EXPECT_EQ(got.scores[8], 0.5);  // Count_out = 9 > 10 - 2
  EXPECT_EQ(got.count_out, 9);
}

TEST(ControlScores, ImplicitCopiesPreference) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{4, 15, 4}, 3, {}, c);
  const auto ranks = entry_ranks(list, identity_ranks());
  const auto s = preference_scores(list, ranks, std::nullopt);
  const auto got = control_scores(list, 3, Intention::implicit(), s, c);
  EXPECT_EQ(got.scores[0], s[0]);
  EXPECT_EQ(got.scores[1], s[1]);
  EXPECT_EQ(got.scores[2], -1.0);
}

TEST(ControlScores, SearchAndComboAreNotRewarded) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{1}, 1, {}, c);
  const std::vector<double> s = {0.0};
  EXPECT_THROW(control_scores(list, 1, Intention::search(0), s, c), ArgumentError);
  const Intention combo = Intention::combo(Intention::item_wise(true, 0), Intention::item_wise(false, 1));
  EXPECT_THROW(control_scores(list, 1, combo, s, c), ArgumentError);
}

TEST(ItemRewards, Mixing) {
  EXPECT_EQ(item_rewards(std::vector<double>{1}, std::vector<double>{1}, 0.5)[0], 1.0);
  EXPECT_EQ(item_rewards(std::vector<double>{0.5}, std::vector<double>{0}, 0.5)[0], 0.25);
  for (double a : {0.0, 0.3, 1.0}) EXPECT_EQ(item_rewards(std::vector<double>{-1}, std::vector<double>{-1}, a)[0], -1.0);
}

TEST(PositionDiscount, Cases) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{7, 8, 9, 9}, 4, {}, c);
  const std::vector<double> s = {1.0, 0.5, 1.0, -1.0};
  const auto star = position_discounted(s, list);
  EXPECT_NEAR(star[0], 0.6309, 1e-4);
  EXPECT_NEAR(star[2], 0.4307, 1e-4);
  EXPECT_EQ(star[3], -1.0);
}

TEST(ListControl, Cases) {
  EXPECT_EQ(list_control_score(Intention::item_wise(true, 0), 10, 10, 0, {}), 1.0);
  EXPECT_EQ(list_control_score(Intention::proportion(IntentionKind::I2_approx, 0, 0.3), 10, 3, 7, {}), 1.0);
  EXPECT_NEAR(list_control_score(Intention::proportion(IntentionKind::I2_le, 0, 0.2), 10, 5, 5, {}), 0.4307, 1e-4);
  const std::vector<double> star = {0.25, 0.5};
  EXPECT_EQ(list_control_score(Intention::implicit(), 2, 0, 0, star), 0.75);
}

TEST(ListReward, Cases) {
  EXPECT_EQ(list_reward(std::vector<double>{1.0}, 1.0, 0.5), 1.0);
  const std::vector<double> illegal = {-1, -1, -1};
  const double ctl = list_control_score(Intention::item_wise(true, 0), 3, 0, 0, illegal);
  EXPECT_NEAR(list_reward(illegal, ctl, 0.5), -1.2847, 1e-4);
  EXPECT_EQ(list_reward(illegal, 0.37, 1.0), 0.37);
}

TEST(TokenRewards, Placement) {
  RewardConfig rc;
  const TokenLayout layout{{0, -1}, 1};
  const std::vector<double> zero = {0.0, 0.0};
  EXPECT_EQ(assemble_token_rewards(layout, std::vector<double>{0.5}, 0.2, zero, rc), (std::vector<double>{0.5, 2.0}));

  const TokenLayout three{{0, 1, -1}, 2};
  const std::vector<double> kl = {1, 1, 1};
  for (double r : assemble_token_rewards(three, std::vector<double>{0, 0}, 0.0, kl, rc)) EXPECT_DOUBLE_EQ(r, -0.3);
}

TEST(TokenRewards, Whitening) {
  std::vector<std::vector<double>> constant = {{2, 2}, {2}};
  whiten(constant);
  for (const auto& row : constant)
    for (double v : row) EXPECT_EQ(v, 0.0);

  std::vector<std::vector<double>> batch = {{1, 2, 3}, {4, 10}};
  whiten(batch);
  double sum = 0, sq = 0;
  for (const auto& row : batch)
    for (double v : row) {
      sum += v;
      sq += v * v;
    }
  EXPECT_NEAR(sum / 5, 0.0, 1e-12);
  EXPECT_NEAR(sq / 5, 1.0, 1e-6);
}

TEST(Breakdown, MissingRankIsAnInternalError) {
  const Catalog& c = two_way();
  const auto list = judge_legality(std::vector<ItemId>{3}, 1, {}, c);
  const std::vector<int> short_ranks = {1, 2};
  EXPECT_THROW(compute_rewards(list, Intention::implicit(), std::nullopt, short_ranks, c, 0.5), std::exception);
}
