// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "recalign/config.hpp"
#include "recalign/metrics.hpp"

namespace recalign {

/// Output directory: RECALIGN_OUTPUT_DIR when set, else the configured one.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

/// Lazily built experiment stages. Each stage writes its artifact under the
/// output directory with the stage's config hash in the name and reloads it
/// when the file already exists.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig config, std::ostream* log = nullptr);

  const ExperimentConfig& config() const noexcept { return config_; }
  const ConfigHashes& hashes() const noexcept { return hashes_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path artifact(const std::string& stem, const std::string& hash, const std::string& ext) const;

  const Catalog& catalog();
  const SplitDataset& split();
  const TeacherModel& teacher();
  const std::vector<InstructionSample>& train_set();
  const std::vector<InstructionSample>& valid_set();
  const Policy& sl_policy();
  const Policy& rl_policy();
  const Policy& rl_best_policy();

  struct TeacherQuality {
    double teacher_hr10 = 0.0;
    double popularity_hr10 = 0.0;
  };
  TeacherQuality teacher_quality();

  /// Runs the settings on `policy` and writes eval-<tag>-<hash>.{json,txt}.
  MetricsReport evaluate(const Policy& policy, const std::string& tag, const std::vector<EvalSetting>& settings);
  std::vector<EvalSetting> eval_settings() const;

  std::filesystem::path sl_path() const;
  std::filesystem::path rl_path() const;

 private:
  void note(const std::string& msg) const;

  ExperimentConfig config_;
  ConfigHashes hashes_;
  std::filesystem::path dir_;
  std::ostream* log_;
  std::optional<Catalog> catalog_;
  std::optional<SplitDataset> split_;
  std::optional<TeacherModel> teacher_;
  std::optional<std::vector<InstructionSample>> train_, valid_;
  std::optional<Policy> sl_, rl_, rl_best_;
};

/// The validation instructions: I0, I1 +/- and "approximately 50%" at k = 10.
std::vector<InstructionSample> build_validation_set(const SampleContext& ctx, std::size_t per_kind,
                                                    std::uint64_t seed);

struct SweepRow {
  double alpha = 0.0;
  bool ok = false;
  std::string error;
  double acc_rec = 0.0;  // mean NDCG@10 over the three proportion settings
  double acc_ctl = 0.0;  // mean CPA over the same settings
};

/// For each alpha, RL from the shared SL checkpoint and evaluation on the
/// proportion settings. A failing value is reported, not fatal.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const SweepSpec& sweep, std::ostream* log = nullptr);
/// Writes sweep-<hash>.{csv,txt,svg}; returns the table text.
std::string write_sweep(const std::filesystem::path& dir, const std::string& hash, const std::vector<SweepRow>& rows);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace recalign
