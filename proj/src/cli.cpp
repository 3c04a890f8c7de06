// SPDX-License-Identifier: Apache-2.0
#include "recalign/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "recalign/config.hpp"
#include "recalign/errors.hpp"
#include "recalign/metrics.hpp"
#include "recalign/pipeline.hpp"
#include "recalign/rewards.hpp"

namespace recalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string output_dir;
  bool quiet = false;

  ExperimentConfig load() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
    if (!output_dir.empty()) {
      c.output_dir = output_dir;
      setenv("RECALIGN_OUTPUT_DIR", output_dir.c_str(), 1);
    }
    c.validate();
    return c;
  }
  std::ostream* log() const { return quiet ? nullptr : &std::cerr; }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config, "YAML experiment config (defaults apply when omitted)");
  cmd->add_option("-o,--output-dir", common.output_dir, "Artifact directory (overrides RECALIGN_OUTPUT_DIR)");
  cmd->add_flag("-q,--quiet", common.quiet, "No progress messages");
}

void copy_to(const fs::path& from, const std::string& to) {
  if (to.empty()) return;
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
  std::cout << "copied " << from.string() << " -> " << to << "\n";
}

// `score` input: a dataset record plus the list to judge. The list is the
// "items" id array when present, otherwise the titles in "response",
// otherwise the record's labels.
ParsedList scored_list(const json& j, const InstructionSample& s, const Catalog& catalog) {
  if (j.contains("items")) {
    std::vector<ListItem> items;
    for (const auto& v : j.at("items")) {
      const auto id = v.get<std::int64_t>();
      if (id >= 0 && static_cast<std::size_t>(id) < catalog.num_items())
        items.push_back({static_cast<ItemId>(id), catalog.item(static_cast<ItemId>(id)).title});
      else
        items.push_back({std::nullopt, "<unknown " + std::to_string(id) + ">"});
    }
    return judge_legality(items, s.k, s.history, catalog);
  }
  if (!s.response.empty()) return judge_titles(split_response(s.response), s.k, s.history, catalog);
  return judge_legality(s.labels, s.k, s.history, catalog);
}

json breakdown_json(const ParsedList& list, const RewardBreakdown& b) {
  json entries = json::array();
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    entries.push_back({{"item", e.item ? json(*e.item) : json(nullptr)},
                       {"raw", e.raw},
                       {"reason", to_string(e.primary)},
                       {"rank", b.ranks[i]},
                       {"score", b.scores[i]},
                       {"score_ctl", b.scores_ctl[i]},
                       {"r_item", b.r_item[i]},
                       {"score_star", b.scores_star[i]}});
  }
  return {{"entries", entries},
          {"count_in", b.count_in},
          {"count_out", b.count_out},
          {"score_ctl_list", b.score_ctl_list},
          {"r_list", b.r_list}};
}

int run_score(const Common& common, const std::string& input, const std::string& output,
              std::optional<double> alpha) {
  const ExperimentConfig config = common.load();
  Pipeline p(config, common.log());
  const double a = alpha.value_or(config.rl.reward.alpha);
  std::ifstream in(input);
  if (!in) throw ArgumentError("cannot open " + input);
  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw std::runtime_error("cannot write " + output);
  }
  std::ostream& out = output.empty() ? std::cout : file;
  std::string line;
  std::size_t n = 0, failed = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    InstructionSample s;
    try {
      rec = json::parse(line);
      s = sample_from_json_line(line);
    } catch (const std::exception& e) {
      throw ParseError(input, n, e.what());
    }
    json result = {{"line", n}, {"kind", to_string(s.intention.kind)}, {"k", s.k}};
    try {
      if (s.intention.kind == IntentionKind::I3 || s.intention.kind == IntentionKind::Combo)
        throw ArgumentError("rewards are defined for I0, I1 and I2 instructions only");
      const ParsedList list = scored_list(rec, s, p.catalog());
      const auto preds = p.teacher().predict_full_ranking(s.history);
      const RewardBreakdown b = compute_rewards(list, s.intention, s.ground_truth, preds.rank_of, p.catalog(), a);
      result.update(breakdown_json(list, b));
      result["illegal"] = list.num_illegal();
      if (s.intention.target) result["tcp"] = tcp(list, *s.intention.target, s.k, p.catalog());
      if (is_list_wise(s.intention.kind)) result["cpa"] = cpa(list, s.intention, s.k, p.catalog());
    } catch (const ArgumentError& e) {
      result["error"] = e.what();
      ++failed;
    }
    out << result.dump() << '\n';
  }
  if (failed && common.log()) *common.log() << "score: " << failed << " record(s) could not be scored\n";
  return 0;
}

int run_report(const Common& common, std::string dir) {
  if (dir.empty()) dir = resolve_output_dir(common.load()).string();
  if (!fs::is_directory(dir)) throw ArgumentError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("eval-", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (files.empty()) throw ArgumentError("no eval-*.json files in " + dir);
  std::sort(files.begin(), files.end());
  std::ostringstream all;
  for (const auto& f : files) {
    std::ifstream in(f);
    const MetricsReport report = MetricsReport::from_json(json::parse(in));
    all << "== " << f.filename().string() << " ==\n" << report.table() << '\n';
  }
  const fs::path out = fs::path(dir) / "report.txt";
  std::ofstream(out) << all.str();
  std::cout << all.str() << "written " << out.string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Instruction-controlled recommendation: data, SL, RL and evaluation"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Build the training and validation instruction datasets");
  add_common(gen, common);

  std::string teacher_out;
  auto* teacher = app.add_subcommand("train-teacher", "Train the sequential teacher and report HR@10");
  add_common(teacher, common);
  teacher->add_option("--out", teacher_out, "Also copy the checkpoint here");

  std::optional<int> sl_epochs;
  std::optional<double> sl_lr;
  std::optional<std::uint64_t> sl_seed;
  std::string sl_dataset, sl_out;
  auto* sl = app.add_subcommand("sl-train", "Supervised training of the policy");
  add_common(sl, common);
  sl->add_option("--epochs", sl_epochs);
  sl->add_option("--lr", sl_lr);
  sl->add_option("--seed", sl_seed);
  sl->add_option("--dataset", sl_dataset, "Train on this json-lines dataset instead of the generated one")
      ->check(CLI::ExistingFile);
  sl->add_option("--out", sl_out, "Also copy the checkpoint here");

  std::optional<int> rl_steps;
  std::optional<double> rl_alpha, rl_eta, rl_lr;
  std::optional<std::uint64_t> rl_seed;
  std::string rl_out;
  auto* rl = app.add_subcommand("rl-train", "Reinforcement learning from the SL checkpoint");
  add_common(rl, common);
  rl->add_option("--steps", rl_steps);
  rl->add_option("--alpha", rl_alpha);
  rl->add_option("--eta", rl_eta);
  rl->add_option("--lr", rl_lr);
  rl->add_option("--seed", rl_seed);
  rl->add_option("--out", rl_out, "Also copy the final checkpoint here");

  std::string eval_ckpt, eval_tag = "custom";
  std::optional<std::size_t> eval_n;
  bool eval_csv = false;
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on the test instructions");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_ckpt, "Policy checkpoint (default: the SL and RL checkpoints of the config)")
      ->check(CLI::ExistingFile);
  eval->add_option("--tag", eval_tag, "Report name for --checkpoint");
  eval->add_option("-n,--samples", eval_n, "Instructions per setting");
  eval->add_flag("--csv", eval_csv, "Also write per-sample csv");

  std::string score_in, score_out;
  std::optional<double> score_alpha;
  auto* score = app.add_subcommand("score", "Reward breakdown for json-lines (instruction, list) records");
  add_common(score, common);
  score->add_option("input", score_in, "Dataset-format json-lines; optional \"items\" id array")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_option("--out", score_out, "Output file (default stdout)");
  score->add_option("--alpha", score_alpha);

  std::vector<double> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "RL and evaluation for each alpha");
  add_common(sweep, common);
  sweep->add_option("--values", sweep_values, "Alpha values (default from config)")->delimiter(',');

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Render tables for every eval-*.json in a directory");
  add_common(report, common);
  report->add_option("dir", report_dir, "Directory with eval outputs (default: the output directory)");

  auto* all = app.add_subcommand("pipeline", "Every stage, then evaluation of SL and RL checkpoints");
  add_common(all, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      Pipeline p(common.load(), common.log());
      std::cout << "train: " << p.train_set().size() << " samples -> "
                << p.artifact("train", p.hashes().dataset, ".jsonl").string() << "\n"
                << "valid: " << p.valid_set().size() << " samples -> "
                << p.artifact("valid", p.hashes().dataset, ".jsonl").string() << "\n";
    } else if (*teacher) {
      Pipeline p(common.load(), common.log());
      p.teacher();
      const auto q = p.teacher_quality();
      std::cout << "teacher HR@10 " << q.teacher_hr10 << "  popularity HR@10 " << q.popularity_hr10 << "\n";
      copy_to(p.artifact("teacher", p.hashes().teacher, ".json"), teacher_out);
    } else if (*sl) {
      ExperimentConfig c = common.load();
      if (sl_epochs) c.sl.epochs = *sl_epochs;
      if (sl_lr) c.sl.lr = *sl_lr;
      if (sl_seed) c.sl.seed = *sl_seed;
      c.validate();
      Pipeline p(c, common.log());
      if (sl_dataset.empty()) {
        p.sl_policy();
        std::cout << "checkpoint " << p.sl_path().string() << "\n";
        copy_to(p.sl_path(), sl_out);
      } else {
        PolicyConfig pc = c.policy;
        pc.n_items = p.catalog().num_items();
        pc.n_categories = p.catalog().num_categories();
        Policy policy = Policy::init(pc);
        const SlLog log = sl_train(policy, read_dataset(sl_dataset), p.valid_set(), c.sl);
        const std::string out = sl_out.empty()
                                    ? p.artifact("sl", p.hashes().sl, "-" + fs::path(sl_dataset).stem().string() + ".json")
                                          .string()
                                    : sl_out;
        policy.save(out);
        std::cout << "valid loss " << log.initial_valid_loss << " -> "
                  << (log.valid_loss.empty() ? log.initial_valid_loss : log.valid_loss.back()) << "\ncheckpoint "
                  << out << "\n";
      }
    } else if (*rl) {
      ExperimentConfig c = common.load();
      if (rl_steps) c.rl.max_steps = *rl_steps;
      if (rl_alpha) c.rl.reward.alpha = *rl_alpha;
      if (rl_eta) c.rl.reward.eta = *rl_eta;
      if (rl_lr) c.rl.lr = *rl_lr;
      if (rl_seed) c.rl.seed = *rl_seed;
      c.validate();
      Pipeline p(c, common.log());
      p.rl_policy();
      std::cout << "checkpoint " << p.rl_path().string() << "\n";
      copy_to(p.rl_path(), rl_out);
    } else if (*eval) {
      ExperimentConfig c = common.load();
      if (eval_n) c.eval.n_samples = *eval_n;
      if (eval_csv) c.eval.csv = true;
      c.validate();
      Pipeline p(c, common.log());
      const auto settings = p.eval_settings();
      if (!eval_ckpt.empty()) {
        std::cout << p.evaluate(Policy::load(eval_ckpt), eval_tag, settings).table();
      } else {
        bool any = false;
        for (const auto& [tag, path] : {std::pair{"sl", p.sl_path()}, std::pair{"rl", p.rl_path()}}) {
          if (!fs::exists(path)) continue;
          any = true;
          std::cout << "== " << tag << " ==\n" << p.evaluate(Policy::load(path), tag, settings).table() << "\n";
        }
        if (!any) throw ArgumentError("no checkpoints found; run sl-train / rl-train first or pass --checkpoint");
      }
    } else if (*score) {
      return run_score(common, score_in, score_out, score_alpha);
    } else if (*sweep) {
      ExperimentConfig c = common.load();
      SweepSpec spec = c.sweep;
      if (!sweep_values.empty()) spec.values = sweep_values;
      for (double a : spec.values)
        if (a < 0.0 || a > 1.0) throw ArgumentError("alpha values must lie in [0, 1]");
      const auto rows = run_sweep(c, spec, common.log());
      Pipeline p(c, nullptr);
      std::cout << write_sweep(p.dir(), p.hashes().sl, rows);
    } else if (*report) {
      return run_report(common, report_dir);
    } else if (*all) {
      Pipeline p(common.load(), common.log());
      const auto q = p.teacher_quality();
      std::cout << "teacher HR@10 " << q.teacher_hr10 << "  popularity HR@10 " << q.popularity_hr10 << "\n";
      const auto settings = p.eval_settings();
      std::cout << "== sl ==\n" << p.evaluate(p.sl_policy(), "sl", settings).table() << "\n";
      std::cout << "== rl ==\n" << p.evaluate(p.rl_policy(), "rl", settings).table();
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace recalign
