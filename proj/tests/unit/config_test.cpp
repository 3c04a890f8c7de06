// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "recalign/config.hpp"
#include "recalign/errors.hpp"

using namespace recalign;

TEST(Config, EmptyTextGivesDefaults) {
  const ExperimentConfig c = parse_config("");
  const ExperimentConfig d;
  EXPECT_EQ(c.seed, d.seed);
  EXPECT_EQ(c.rl.reward.alpha, 0.5);
  EXPECT_EQ(c.rl.temperature, 0.7);
  EXPECT_EQ(c.rl.max_steps, d.rl.max_steps);
  EXPECT_EQ(c.sl.epochs, d.sl.epochs);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(parse_config("rl: {alpah: 0.3}\n"), ArgumentError);
  EXPECT_THROW(parse_config("sll: {}\n"), ArgumentError);
  EXPECT_THROW(parse_config("rl: [1, 2\n"), ArgumentError);
}

TEST(Config, OutOfRangeValuesFailValidation) {
  EXPECT_THROW(parse_config("rl: {reward: {alpha: 1.5}}\n").validate(), ArgumentError);
  EXPECT_THROW(parse_config("dataset: {k_min: 5, k_max: 2}\n").validate(), ArgumentError);
}

TEST(Config, SeedPropagatesUnlessOverridden) {
  const ExperimentConfig c = parse_config("seed: 42\nrl: {seed: 7}\n");
  EXPECT_EQ(c.teacher.seed, 42u);
  EXPECT_EQ(c.policy.seed, 42u);
  EXPECT_EQ(c.sl.seed, 42u);
  EXPECT_EQ(c.catalog.synth.seed, 42u);
  EXPECT_EQ(c.rl.seed, 7u);
}

TEST(Config, DumpParseRoundTrip) {
  const ExperimentConfig c = parse_config("seed: 3\nsl: {epochs: 4, lr: 0.002}\nrl: {reward: {alpha: 0.25}}\n"
                                          "sweep: {values: [0.1, 0.9]}\neval: {csv: true}\n");
  const ExperimentConfig back = parse_config(dump_config(c));
  EXPECT_EQ(dump_config(back), dump_config(c));
  EXPECT_EQ(back.sl.epochs, 4);
  EXPECT_EQ(back.rl.reward.alpha, 0.25);
  EXPECT_EQ(back.sweep.values, (std::vector<double>{0.1, 0.9}));
  EXPECT_TRUE(back.eval.csv);
}

TEST(Config, HashesFollowStageDependencies) {
  const ExperimentConfig a = parse_config("");
  const ConfigHashes ha = config_hashes(a);
  const ConfigHashes rl = config_hashes(parse_config("rl: {reward: {alpha: 0.3}}\n"));
  EXPECT_EQ(rl.catalog, ha.catalog);
  EXPECT_EQ(rl.teacher, ha.teacher);
  EXPECT_EQ(rl.dataset, ha.dataset);
  EXPECT_EQ(rl.sl, ha.sl);
  EXPECT_NE(rl.rl, ha.rl);
  EXPECT_NE(rl.eval, ha.eval);

  const ConfigHashes teacher = config_hashes(parse_config("teacher: {epochs: 2}\n"));
  EXPECT_EQ(teacher.catalog, ha.catalog);
  EXPECT_NE(teacher.teacher, ha.teacher);
  EXPECT_NE(teacher.sl, ha.sl);
  EXPECT_EQ(config_hashes(a).eval, ha.eval);
}
