// SPDX-License-Identifier: Apache-2.0
#include "recalign/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "recalign/errors.hpp"

namespace recalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

fs::path resolve_output_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv("RECALIGN_OUTPUT_DIR"); env && *env) return env;
  return config.output_dir;
}

Pipeline::Pipeline(ExperimentConfig config, std::ostream* log)
    : config_(std::move(config)), hashes_(config_hashes(config_)), dir_(resolve_output_dir(config_)), log_(log) {
  config_.validate();
  fs::create_directories(dir_);
}

fs::path Pipeline::artifact(const std::string& stem, const std::string& hash, const std::string& ext) const {
  return dir_ / (stem + "-" + hash + ext);
}

void Pipeline::note(const std::string& msg) const {
  if (log_) *log_ << msg << std::endl;
}

const Catalog& Pipeline::catalog() {
  if (catalog_) return *catalog_;
  const auto& src = config_.catalog;
  if (!src.interactions.empty()) {
    catalog_ = load_interactions(src.interactions, src.items, src.format);
    note("catalog: loaded " + std::to_string(catalog_->num_items()) + " items from " + src.items.string());
    return *catalog_;
  }
  const fs::path inter = artifact("catalog", hashes_.catalog, ".interactions.tsv");
  const fs::path items = artifact("catalog", hashes_.catalog, ".items.jsonl");
  if (fs::exists(inter) && fs::exists(items)) {
    catalog_ = load_interactions(inter, items, InteractionFormat::tabular);
  } else {
    const Catalog generated = synth_catalog(src.synth);
    save_catalog(generated, inter, items);
    // Loading assigns category ids by first appearance; reload so a rerun
    // from the saved files sees the same ids.
    catalog_ = load_interactions(inter, items, InteractionFormat::tabular);
    note("catalog: generated " + std::to_string(catalog_->num_items()) + " items, " +
         std::to_string(catalog_->num_users()) + " users -> " + items.string());
  }
  return *catalog_;
}

const SplitDataset& Pipeline::split() {
  if (!split_) {
    split_ = leave_one_out_split(catalog(), config_.catalog.max_history);
    if (split_->skipped) note("split: skipped " + std::to_string(split_->skipped) + " users with < 3 interactions");
  }
  return *split_;
}

const TeacherModel& Pipeline::teacher() {
  if (teacher_) return *teacher_;
  const fs::path path = artifact("teacher", hashes_.teacher, ".json");
  if (fs::exists(path)) {
    teacher_ = TeacherModel::load(path);
  } else {
    Stopwatch sw;
    teacher_ = train_teacher(split(), catalog().num_items(), config_.teacher);
    teacher_->save(path);
    note("teacher: trained " + to_string(config_.teacher.kind) + " in " + fixed(sw.seconds(), 1) + " s -> " +
         path.string());
  }
  if (teacher_->num_items() != catalog().num_items()) throw ArgumentError("teacher checkpoint does not match the catalog");
  return *teacher_;
}

Pipeline::TeacherQuality Pipeline::teacher_quality() {
  TeacherQuality q;
  q.teacher_hr10 = teacher_hit_rate(teacher(), split(), Stage::valid, 10);
  q.popularity_hr10 = popularity_hit_rate(item_popularity(catalog(), split()), split(), Stage::valid, 10);
  return q;
}

std::vector<InstructionSample> build_validation_set(const SampleContext& ctx, std::size_t per_kind,
                                                    std::uint64_t seed) {
  std::vector<const UserSplit*> users;
  for (const auto& u : ctx.split.users)
    if (SplitDataset::usable(u, ctx.stage)) users.push_back(&u);
  Rng shuffle = make_stream({seed, 0x76616cULL});
  std::shuffle(users.begin(), users.end(), shuffle);
  std::vector<InstructionSample> out;
  const IntentionKind kinds[] = {IntentionKind::I0, IntentionKind::I1_pos, IntentionKind::I1_neg,
                                 IntentionKind::I2_approx};
  for (IntentionKind kind : kinds) {
    std::size_t made = 0;
    for (std::size_t j = 0; j < users.size() && made < per_kind; ++j) {
      Rng rng = make_stream({seed, 0x76616cULL, static_cast<std::uint64_t>(kind), j});
      try {
        const auto m = kind == IntentionKind::I2_approx ? std::optional<double>(0.5) : std::nullopt;
        out.push_back(gen_sample(kind, *users[j], ctx, rng, 10, 10, m));
        ++made;
      } catch (const InfeasibleSample&) {
      }
    }
  }
  return out;
}

const std::vector<InstructionSample>& Pipeline::train_set() {
  if (train_) return *train_;
  const fs::path path = artifact("train", hashes_.dataset, ".jsonl");
  if (fs::exists(path)) {
    train_ = read_dataset(path);
    return *train_;
  }
  Stopwatch sw;
  const TemplateSet templates = TemplateSet::builtin();
  const SampleContext ctx{catalog(), split(), teacher(), templates, Stage::train};
  auto data = build_training_set(ctx, config_.dataset.quota, config_.seed, config_.dataset.k_min,
                                 config_.dataset.k_max, config_.dataset.retry_cap);
  write_dataset(path, data.samples);
  note("dataset: " + std::to_string(data.samples.size()) + " training samples (" + std::to_string(data.skipped) +
       " skipped) in " + fixed(sw.seconds(), 1) + " s -> " + path.string());
  train_ = std::move(data.samples);
  return *train_;
}

const std::vector<InstructionSample>& Pipeline::valid_set() {
  if (valid_) return *valid_;
  const fs::path path = artifact("valid", hashes_.dataset, ".jsonl");
  if (fs::exists(path)) {
    valid_ = read_dataset(path);
    return *valid_;
  }
  const TemplateSet templates = TemplateSet::builtin();
  const SampleContext ctx{catalog(), split(), teacher(), templates, Stage::valid};
  valid_ = build_validation_set(ctx, config_.dataset.valid_per_kind, config_.seed);
  write_dataset(path, *valid_);
  return *valid_;
}

fs::path Pipeline::sl_path() const { return artifact("sl", hashes_.sl, ".json"); }
fs::path Pipeline::rl_path() const { return artifact("rl", hashes_.rl, ".json"); }

const Policy& Pipeline::sl_policy() {
  if (sl_) return *sl_;
  const fs::path path = sl_path();
  if (fs::exists(path)) {
    sl_ = Policy::load(path);
    return *sl_;
  }
  PolicyConfig pc = config_.policy;
  pc.n_items = catalog().num_items();
  pc.n_categories = catalog().num_categories();
  Policy policy = Policy::init(pc);
  const auto& train = train_set();
  const auto& valid = valid_set();
  Stopwatch sw;
  const SlLog log = sl_train(policy, train, valid, config_.sl);
  policy.save(path);
  json j = {{"initial_valid_loss", log.initial_valid_loss},
            {"train_loss", log.train_loss},
            {"valid_loss", log.valid_loss},
            {"best_epoch", log.best_epoch},
            {"seconds", sw.seconds()}};
  write_text(artifact("sl", hashes_.sl, ".log.json"), j.dump(1) + "\n");
  note("sl: " + std::to_string(config_.sl.epochs) + " epochs in " + fixed(sw.seconds(), 1) + " s, valid loss " +
       fixed(log.initial_valid_loss) + " -> " + (log.valid_loss.empty() ? "-" : fixed(log.valid_loss.back())) +
       (log.best_epoch >= 0 ? ", kept epoch " + std::to_string(log.best_epoch + 1) + " (" +
                                  fixed(log.valid_loss[static_cast<std::size_t>(log.best_epoch)]) + ")"
                            : std::string()) +
       " -> " + path.string());
  sl_ = std::move(policy);
  return *sl_;
}

const Policy& Pipeline::rl_policy() {
  if (rl_) return *rl_;
  const fs::path path = rl_path();
  const fs::path best = artifact("rl", hashes_.rl, ".best.json");
  if (fs::exists(path) && fs::exists(best)) {
    rl_ = Policy::load(path);
    rl_best_ = Policy::load(best);
    return *rl_;
  }
  std::vector<InstructionSample> pool;
  for (const auto& s : train_set())
    if (s.intention.kind != IntentionKind::I3 && s.ground_truth) pool.push_back(s);
  const Policy& start = sl_policy();
  const auto& valid = valid_set();
  std::ofstream log(artifact("rl", hashes_.rl, ".log.jsonl"));
  Stopwatch sw;
  const auto on_step = [&](const RlLogEntry& e) {
    json j = {{"step", e.step},
              {"mean_r_list", e.mean_r_list},
              {"illegal_rate", e.illegal_rate},
              {"mean_kl", e.mean_kl},
              {"mean_length", e.mean_length},
              {"policy_loss", e.ppo.policy_loss},
              {"value_loss", e.ppo.value_loss},
              {"entropy", e.ppo.entropy},
              {"clip_fraction", e.ppo.clip_fraction},
              {"mean_ratio", e.ppo.mean_ratio}};
    if (e.valid_control) j["valid_control"] = *e.valid_control;
    log << j.dump() << '\n';
    if (e.valid_control)
      note("rl: step " + std::to_string(e.step) + "  R_list " + fixed(e.mean_r_list, 3) + "  illegal " +
           fixed(e.illegal_rate, 3) + "  kl " + fixed(e.mean_kl, 4) + "  valid control " +
           fixed(*e.valid_control, 3) + "  (" + fixed(sw.seconds(), 0) + " s)");
  };
  RlResult result = rl_train(start, teacher(), catalog(), pool, valid, config_.rl, on_step);
  result.final_policy.save(path);
  result.best_policy.save(best);
  note("rl: " + std::to_string(config_.rl.max_steps) + " steps in " + fixed(sw.seconds(), 1) + " s, best step " +
       std::to_string(result.best_step) + " -> " + path.string());
  rl_ = std::move(result.final_policy);
  rl_best_ = std::move(result.best_policy);
  return *rl_;
}

const Policy& Pipeline::rl_best_policy() {
  rl_policy();
  return *rl_best_;
}

std::vector<EvalSetting> Pipeline::eval_settings() const {
  auto settings = default_eval_settings(config_.eval.n_samples);
  if (config_.eval.combo)
    for (auto& s : combo_eval_settings(config_.eval.n_samples)) settings.push_back(std::move(s));
  return settings;
}

MetricsReport Pipeline::evaluate(const Policy& policy, const std::string& tag,
                                 const std::vector<EvalSetting>& settings) {
  const EvalContext ctx{catalog(), split(), teacher(), Stage::test};
  Stopwatch sw;
  MetricsReport report = run_eval(policy, ctx, settings, config_.seed);
  write_text(artifact("eval-" + tag, hashes_.eval, ".json"), report.to_json().dump(1) + "\n");
  write_text(artifact("eval-" + tag, hashes_.eval, ".txt"), report.table());
  if (config_.eval.csv) write_text(artifact("eval-" + tag, hashes_.eval, ".csv"), report.samples_csv());
  note("eval " + tag + ": " + std::to_string(settings.size()) + " settings in " + fixed(sw.seconds(), 1) + " s");
  return report;
}

// ---------------------------------------------------------------------------

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman needs two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const SweepSpec& sweep, std::ostream* log) {
  std::vector<SweepRow> rows;
  std::vector<EvalSetting> settings;
  for (const auto& s : default_eval_settings(config.eval.n_samples))
    if (is_list_wise(s.kind)) settings.push_back(s);
  for (double alpha : sweep.values) {
    SweepRow row;
    row.alpha = alpha;
    try {
      ExperimentConfig c = config;
      c.rl.reward.alpha = alpha;
      Pipeline p(c, log);
      const MetricsReport report = p.evaluate(p.rl_policy(), "sweep", settings);
      double rec = 0.0, ctl = 0.0;
      for (const auto& r : report.settings) {
        rec += r.controlled.ndcg;
        ctl += r.controlled.cpa.value_or(0.0);
      }
      row.acc_rec = rec / static_cast<double>(report.settings.size());
      row.acc_ctl = ctl / static_cast<double>(report.settings.size());
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      if (log) *log << "sweep: alpha " << alpha << " failed: " << e.what() << std::endl;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string sweep_svg(const std::vector<SweepRow>& rows) {
  const double w = 480, h = 300, left = 50, right = 20, top = 20, bottom = 40;
  double xmin = 1, xmax = 0, ymin = 1, ymax = 0;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    xmin = std::min(xmin, r.alpha);
    xmax = std::max(xmax, r.alpha);
    ymin = std::min({ymin, r.acc_rec, r.acc_ctl});
    ymax = std::max({ymax, r.acc_rec, r.acc_ctl});
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  const struct {
    const char* name;
    const char* color;
    double SweepRow::*field;
  } series[] = {{"Acc_rec", "steelblue", &SweepRow::acc_rec}, {"Acc_ctl", "darkorange", &SweepRow::acc_ctl}};
  int legend = 0;
  for (const auto& ser : series) {
    s << "<polyline fill=\"none\" stroke=\"" << ser.color << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows)
      if (r.ok) s << px(r.alpha) << ',' << py(r.*ser.field) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << w - right - 90 << "\" y=\"" << top + 14 + 16 * legend++ << "\" fill=\"" << ser.color
      << "\" font-size=\"12\">" << ser.name << "</text>\n";
  }
  for (const auto& r : rows)
    if (r.ok)
      s << "<text x=\"" << px(r.alpha) - 10 << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\">" << r.alpha
        << "</text>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 6 << "\" font-size=\"12\">alpha</text>\n";
  s << "<text x=\"4\" y=\"" << top + 4 << "\" font-size=\"11\">" << fixed(ymax, 3) << "</text>\n";
  s << "<text x=\"4\" y=\"" << h - bottom << "\" font-size=\"11\">" << fixed(ymin, 3) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::string write_sweep(const fs::path& dir, const std::string& hash, const std::vector<SweepRow>& rows) {
  std::ostringstream csv, table;
  csv << "alpha,acc_rec,acc_ctl,status\n";
  table << "alpha  Acc_rec  Acc_ctl\n";
  std::vector<double> a, rec, ctl;
  for (const auto& r : rows) {
    csv << r.alpha << ',' << (r.ok ? fixed(r.acc_rec) : "") << ',' << (r.ok ? fixed(r.acc_ctl) : "") << ','
        << (r.ok ? "ok" : "failed") << '\n';
    if (r.ok) {
      table << fixed(r.alpha, 2) << "   " << fixed(r.acc_rec) << "   " << fixed(r.acc_ctl) << '\n';
      a.push_back(r.alpha);
      rec.push_back(r.acc_rec);
      ctl.push_back(r.acc_ctl);
    } else {
      table << fixed(r.alpha, 2) << "   FAILED: " << r.error << '\n';
    }
  }
  if (a.size() >= 2)
    table << "\nSpearman(alpha, Acc_ctl) = " << fixed(spearman(a, ctl), 3)
          << "\nSpearman(alpha, Acc_rec) = " << fixed(spearman(a, rec), 3) << '\n';
  write_text(dir / ("sweep-" + hash + ".csv"), csv.str());
  write_text(dir / ("sweep-" + hash + ".txt"), table.str());
  write_text(dir / ("sweep-" + hash + ".svg"), sweep_svg(rows));
  return table.str();
}

}  // namespace recalign
