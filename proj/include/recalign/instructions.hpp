// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recalign/catalog.hpp"
#include "recalign/random.hpp"
#include "recalign/teacher.hpp"

namespace recalign {

enum class IntentionKind { I0, I1_pos, I1_neg, I2_le, I2_ge, I2_approx, I3, Combo };

inline constexpr std::array<IntentionKind, 7> kSingleKinds = {
    IntentionKind::I0,    IntentionKind::I1_pos,    IntentionKind::I1_neg, IntentionKind::I2_le,
    IntentionKind::I2_ge, IntentionKind::I2_approx, IntentionKind::I3};

std::string to_string(IntentionKind kind);
IntentionKind intention_kind_from_string(const std::string& s);

constexpr bool is_item_wise(IntentionKind k) { return k == IntentionKind::I1_pos || k == IntentionKind::I1_neg; }
constexpr bool is_list_wise(IntentionKind k) {
  return k == IntentionKind::I2_le || k == IntentionKind::I2_ge || k == IntentionKind::I2_approx;
}

/// A typed control intention. I1/I2/I3 carry a target category, I2 kinds a
/// proportion m, Combo exactly two non-Combo parts.
struct Intention {
  IntentionKind kind = IntentionKind::I0;
  std::optional<CategoryId> target;
  double m = 0.0;
  std::vector<Intention> parts;  // Combo only
  bool fallback = false;         // target chosen by the popularity fallback

  static Intention implicit() { return {}; }
  static Intention item_wise(bool positive, CategoryId c);
  static Intention proportion(IntentionKind kind, CategoryId c, double m);
  static Intention search(CategoryId c);
  static Intention combo(Intention first, Intention second);

  /// Throws ArgumentError when the field combination is invalid.
  void validate() const;
  bool operator==(const Intention&) const = default;
};

struct InstructionSample {
  UserIndex user = -1;  // -1 for item search
  std::vector<ItemId> history;
  Intention intention;
  int k = 1;
  std::optional<ItemId> ground_truth;
  std::vector<ItemId> labels;
  std::string prompt;
  std::string response;

  bool operator==(const InstructionSample&) const = default;
};

struct DatasetQuota {
  std::size_t i0 = 0;
  std::size_t i1 = 0;  // split evenly into positive / negative
  std::size_t i2 = 0;  // split evenly into <=, >=, ~
  std::size_t i3 = 0;
};

/// Prompt templates, one named section per instruction form.
class TemplateSet {
 public:
  /// The built-in templates (mirrors data/templates.txt).
  static TemplateSet builtin();
  static TemplateSet parse(const std::string& text);
  static TemplateSet load(const std::filesystem::path& path);

  const std::vector<std::string>& section(const std::string& name) const;
  const std::string& first(const std::string& name) const { return section(name).front(); }

 private:
  std::map<std::string, std::vector<std::string>> sections_;
};

/// Replaces every `{name}` with values.at(name). Missing values throw TemplateError.
std::string substitute(const std::string& tmpl, const std::map<std::string, std::string>& values);

/// "30%" for 0.3; one decimal when the percentage is not integral.
std::string format_proportion(double m);

/// k * m on a 1e-9 grid, so proportions written as decimals give whole
/// counts (10 * 0.3 is 3, not 3.0000000000000004).
double proportion_count(int k, double m);

/// Uniform k in [lo, hi].
int draw_k(Rng& rng, int lo, int hi);

inline constexpr int kTrainKMin = 1, kTrainKMax = 10;
inline constexpr int kFormatKMin = 11, kFormatKMax = 15;

inline constexpr double kEvalLeProportion = 0.2;
inline constexpr double kEvalApproxProportion = 0.3;
inline constexpr double kEvalGeProportion = 0.3;

/// Lowest category id of an item.
CategoryId primary_category(const Catalog& catalog, ItemId item);

/// Most frequent category among the teacher's top-10 (history excluded),
/// skipping every category of the ground-truth item. Ties go to the lowest id.
/// Falls back to the non-target category with the most items.
CategoryId negative_control_category(const Catalog& catalog, const TeacherPredictions& preds,
                                     ItemId ground_truth, bool* used_fallback = nullptr);

/// Evaluation-time intention for a user whose held-out item is ground_truth.
/// I2 kinds use the fixed evaluation proportions (0.2, 0.3, 0.3).
Intention make_intention_for_eval(IntentionKind kind, ItemId ground_truth, const TeacherPredictions& preds,
                                  const Catalog& catalog);

/// Label list: ground truth first, then teacher-ranked fill respecting the
/// intention. Throws InfeasibleSample if the catalog cannot satisfy it.
std::vector<ItemId> augment_labels(const TeacherPredictions& preds, const Intention& intention, ItemId ground_truth,
                                   int k, const Catalog& catalog);

/// Count of in-category items an I2 label list is steered to: the feasible
/// count nearest k*m within the bound (ties to the smaller count).
std::optional<int> proportion_target_count(IntentionKind kind, int k, double m, bool ground_truth_in,
                                           int available_in, int available_out);

std::string render_history(const Catalog& catalog, const std::vector<ItemId>& history);
std::string render_response(const Catalog& catalog, const std::vector<ItemId>& items);
/// Splits a rendered response into item titles (list numbering removed).
std::vector<std::string> split_response(const std::string& response);

/// The natural-language phrase for one (non-Combo) intention, using `rng` to
/// pick among the listed phrasings for I1/I3.
std::string intention_phrase(const Intention& intention, const Catalog& catalog, const TemplateSet& templates,
                             Rng& rng);

std::string render_prompt(const InstructionSample& sample, const Catalog& catalog, const TemplateSet& templates,
                          Rng& rng);

struct SampleContext {
  const Catalog& catalog;
  const SplitDataset& split;
  const TeacherModel& teacher;
  const TemplateSet& templates;
  Stage stage = Stage::train;
};

/// Builds one fully rendered sample. For I1/I2 the intention follows the
/// evaluation construction; training draws m from {0.1, ..., 0.9}.
/// `fixed_m` overrides the proportion for I2 kinds.
InstructionSample gen_sample(IntentionKind kind, const UserSplit& user, const SampleContext& ctx, Rng& rng,
                             int k_lo, int k_hi, std::optional<double> fixed_m = std::nullopt);

struct GeneratedDataset {
  std::vector<InstructionSample> samples;
  std::size_t skipped = 0;
};

/// Samples for every quota. Each sample uses its own stream derived from
/// (seed, kind, index, attempt), so the result does not depend on order.
GeneratedDataset build_training_set(const SampleContext& ctx, const DatasetQuota& quotas, std::uint64_t seed,
                                    int k_lo = kTrainKMin, int k_hi = kTrainKMax, int retry_cap = 20);

void write_dataset(const std::filesystem::path& path, const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> read_dataset(const std::filesystem::path& path);

// json-lines record helpers, shared with the score command.
std::string sample_to_json_line(const InstructionSample& s);
InstructionSample sample_from_json_line(const std::string& line);

}  // namespace recalign
