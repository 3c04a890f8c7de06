// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"
#include "recalign/policy.hpp"
#include "recalign/rl.hpp"
#include "recalign/teacher.hpp"

namespace recalign {

struct CatalogSource {
  // Empty paths mean the synthetic generator.
  std::filesystem::path interactions;
  std::filesystem::path items;
  InteractionFormat format = InteractionFormat::tabular;
  SynthConfig synth;
  std::size_t max_history = 10;
};

struct DatasetConfig {
  DatasetQuota quota{2000, 2000, 2400, 300};
  int k_min = kTrainKMin;
  int k_max = kTrainKMax;
  int retry_cap = 20;
  std::size_t valid_per_kind = 64;
};

struct EvalConfig {
  std::size_t n_samples = 500;
  bool combo = true;
  bool csv = false;
};

struct SweepSpec {
  std::vector<double> values{0.2, 0.35, 0.5, 0.65, 0.8};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs";
  CatalogSource catalog;
  TeacherConfig teacher;
  DatasetConfig dataset;
  PolicyConfig policy;  // n_items / n_categories are filled from the catalog
  SlConfig sl;
  RlConfig rl;
  EvalConfig eval;
  SweepSpec sweep;

  /// Throws ArgumentError on out-of-range values.
  void validate() const;
};

/// Reads a YAML file; unknown keys are rejected. Missing keys keep defaults,
/// and section seeds default to the top-level seed.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& yaml_text);
std::string dump_config(const ExperimentConfig& config);

/// Content hashes for artifact names. Each stage folds in the hash of the
/// stages it depends on.
struct ConfigHashes {
  std::string catalog, teacher, dataset, sl, rl, eval;
};
ConfigHashes config_hashes(const ExperimentConfig& config);

}  // namespace recalign
