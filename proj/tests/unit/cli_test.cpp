// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "recalign/cli.hpp"
#include "recalign/metrics.hpp"
#include "unit/world.hpp"

using namespace recalign;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "recalign");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

const char* kTinyConfig = R"(seed: 5
catalog:
  synthetic: {n_items: 80, n_categories: 4, n_users: 150}
teacher: {kind: markov_popularity}
dataset: {i0: 10, i1: 10, i2: 30, i3: 0, valid_per_kind: 4}
)";

fs::path find_one(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && name.size() > ext.size() && name.substr(name.size() - ext.size()) == ext)
      return e.path();
  }
  return {};
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run({"gen-data", "-q", "-c", "/nonexistent/config.yaml"}), 2);
  EXPECT_EQ(run({"no-such-command"}), 2);
  EXPECT_EQ(run({}), 2);
}

TEST(Cli, ScoreOnLabelsSatisfiesProportionControl) {
  const auto dir = testing_world::temp_dir("cli_score");
  std::ofstream(dir / "tiny.yaml") << kTinyConfig;
  ASSERT_EQ(run({"gen-data", "-q", "-c", (dir / "tiny.yaml").string(), "-o", (dir / "out").string()}), 0);
  const fs::path train = find_one(dir / "out", "train-", ".jsonl");
  ASSERT_FALSE(train.empty());

  const fs::path scored = dir / "scored.jsonl";
  ASSERT_EQ(run({"score", "-q", "-c", (dir / "tiny.yaml").string(), "-o", (dir / "out").string(), train.string(),
                 "--out", scored.string()}),
            0);
  std::ifstream in(scored);
  std::string line;
  int proportion = 0, lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++lines;
    ASSERT_FALSE(j.contains("error")) << line;
    EXPECT_EQ(j["illegal"].get<int>(), 0);
    if (j.contains("cpa")) {
      EXPECT_EQ(j["cpa"].get<double>(), 1.0) << line;
      ++proportion;
    }
  }
  EXPECT_EQ(lines, 50);
  EXPECT_EQ(proportion, 30);
}

TEST(Cli, ScoreNamesTheBadLine) {
  const auto dir = testing_world::temp_dir("cli_bad");
  std::ofstream(dir / "tiny.yaml") << kTinyConfig;
  std::ofstream(dir / "bad.jsonl") << "\n{oops\n";
  EXPECT_EQ(run({"score", "-q", "-c", (dir / "tiny.yaml").string(), "-o", (dir / "out").string(),
                 (dir / "bad.jsonl").string()}),
            1);
}

TEST(Cli, ReportCollectsEvalFiles) {
  const auto dir = testing_world::temp_dir("cli_report");
  const auto& w = testing_world::world();
  const Responder labels = [](const InstructionSample& s) {
    std::vector<ListItem> out;
    for (ItemId id : s.labels) out.push_back({id, ""});
    return out;
  };
  const auto report = run_eval_with(labels, {w.catalog, w.split, w.teacher, Stage::test}, default_eval_settings(5), 1);
  std::ofstream(dir / "eval-labels-0.json") << report.to_json().dump();
  EXPECT_EQ(run({"report", dir.string()}), 0);
  std::ifstream in(dir / "report.txt");
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(text.find("== eval-labels-0.json =="), std::string::npos);
  EXPECT_NE(text.find("I2_approx30"), std::string::npos);

  EXPECT_EQ(run({"report", (dir / "missing").string()}), 2);
}
