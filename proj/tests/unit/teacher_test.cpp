// SPDX-License-Identifier: Apache-2.0
#include <numeric>

#include <gtest/gtest.h>

#include "oracle/finite_diff.hpp"
#include "recalign/teacher.hpp"
#include "unit/world.hpp"

using namespace recalign;

TEST(Teacher, TiesGoToLowerId) {
  const std::vector<double> scores = {0.5, 0.9, 0.5, 0.9};
  const auto p = rank_by_scores(scores, {});
  EXPECT_EQ(p.ranked, (std::vector<ItemId>{1, 3, 0, 2}));
  EXPECT_EQ(p.rank_of[static_cast<std::size_t>(p.ranked[0])], 1);
  for (std::size_t r = 0; r < p.ranked.size(); ++r)
    EXPECT_EQ(p.rank_of[static_cast<std::size_t>(p.ranked[r])], static_cast<int>(r) + 1);
}

TEST(Teacher, MarkovFallsBackToPopularity) {
  std::vector<Item> items;
  for (int i = 0; i < 5; ++i) items.push_back({i, "e" + std::to_string(i), "Item " + std::to_string(i), {0}});
  // Training prefixes are [0, 1, 3] and [1, 0, 1, 4, 2]: item 3 is never followed.
  const Catalog c(items, {"All"}, {{"u0", {0, 1, 3, 2, 1}}, {"u1", {1, 0, 1, 4, 2, 0, 3}}});
  const SplitDataset s = leave_one_out_split(c, 10);
  TeacherConfig tc;
  tc.kind = TeacherKind::markov_popularity;
  const TeacherModel t = train_teacher(s, c.num_items(), tc);
  const auto got = t.predict_full_ranking(std::vector<ItemId>{3});
  const auto pop = popularity_ranking(item_popularity(c, s), {3});
  EXPECT_EQ(got.ranked, pop.ranked);
  EXPECT_NE(t.predict_full_ranking(std::vector<ItemId>{4}).ranked, got.ranked);
}

TEST(Teacher, AttentiveDeterministicAndBeatsPopularity) {
  const Catalog c = synth_catalog(150, 6, 500, 9);
  const SplitDataset s = leave_one_out_split(c, 10);
  TeacherConfig tc;
  tc.epochs = 3;
  tc.dim = 16;
  const TeacherModel a = train_teacher(s, c.num_items(), tc);
  const TeacherModel b = train_teacher(s, c.num_items(), tc);
  EXPECT_TRUE(a == b);
  EXPECT_GT(teacher_hit_rate(a, s, Stage::valid, 10), popularity_hit_rate(item_popularity(c, s), s, Stage::valid, 10));
}

TEST(Teacher, AttentiveGradientMatchesFiniteDifferences) {
  TeacherConfig tc;
  tc.dim = 4;
  tc.max_len = 4;
  TeacherModel m = TeacherModel::init_attentive(12, tc);
  const TeacherModel::Example ex{{3, 5, 7}, 2, {0, 9, 11}};
  std::vector<double> grad(m.parameters().size(), 0.0);
  m.example_loss(ex, &grad);
  std::vector<std::size_t> coords(grad.size());
  std::iota(coords.begin(), coords.end(), 0);
  const auto r = oracle::check_gradient(
      m.mutable_parameters(), [&] { return m.example_loss(ex, nullptr); }, grad, coords);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Teacher, SaveLoadRoundTrip) {
  const auto dir = testing_world::temp_dir("teacher_io");
  const auto& w = testing_world::world();
  w.teacher.save(dir / "t.json");
  EXPECT_TRUE(TeacherModel::load(dir / "t.json") == w.teacher);
}
