// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"
#include "recalign/rewards.hpp"

namespace recalign {

class Policy;
class TeacherModel;

struct HrNdcg {
  double hr = 0.0;
  double ndcg = 0.0;
};

/// Every entry occupies a position, legal or not.
HrNdcg hr_ndcg(const ParsedList& list, ItemId target, int K);

/// Legal entries among the first `k` that belong to category c.
int count_in_category(const ParsedList& list, CategoryId c, int k, const Catalog& catalog);

/// (1/K) * number of legal entries in the first K that belong to c.
double tcp(const ParsedList& list, CategoryId c, int K, const Catalog& catalog);

bool cpa_accepts(IntentionKind kind, int count_in, int k, double m);
/// 1 when the first k legal entries satisfy the proportion bound, else 0.
double cpa(const ParsedList& list, const Intention& intention, int k, const Catalog& catalog);

/// Legal entries in the first K that belong to c1 but not to c2, over K.
double combinatorial_tcp(const ParsedList& list, CategoryId c1, CategoryId c2, int K, const Catalog& catalog);

struct Formatting {
  double correct_count = 0.0;
  double repeat_item = 0.0;
  double non_exist = 0.0;
  double in_history = 0.0;
};

/// Per-response contribution: flag rates over the first min(N, k) slots.
Formatting formatting_of(const ParsedList& list);
/// Mean of the per-response contributions.
Formatting formatting_metrics(const std::vector<ParsedList>& lists);

/// Single-number compliance: TCP@k for positive control, 1 - TCP@k for
/// negative control, CPA for proportion control. I0 has none.
std::optional<double> control_accuracy(const ParsedList& list, const Intention& intention, const Catalog& catalog);

struct EvalSetting {
  std::string name;
  IntentionKind kind = IntentionKind::I0;
  IntentionKind combo_first = IntentionKind::I1_pos;  // Combo: first part; the second is a negative control
  int k_lo = 10;
  int k_hi = 10;
  int K = 10;
  std::size_t n_samples = 500;
};

/// I0, I1 +/-, the three proportion settings and the k = 11..15 formatting probe.
std::vector<EvalSetting> default_eval_settings(std::size_t n_samples);
/// Positive & negative, and <=20% & negative.
std::vector<EvalSetting> combo_eval_settings(std::size_t n_samples);

struct SettingMetrics {
  std::size_t n = 0;
  double hr = 0.0, ndcg = 0.0;
  std::optional<double> tcp, cpa;
  Formatting formatting;
  std::optional<double> tc1n2p, tc2p;  // combinatorial settings
};

struct SettingResult {
  EvalSetting setting;
  SettingMetrics controlled;
  SettingMetrics baseline;  // same users and k, intention replaced by I0
};

struct SampleRecord {
  std::string setting;
  UserIndex user = -1;
  int k = 0;
  std::string intention;
  bool baseline = false;
  std::vector<int> tokens;
  double hr = 0.0, ndcg = 0.0;
  std::optional<double> tcp, cpa;
};

struct MetricsReport {
  std::vector<SettingResult> settings;
  std::vector<SampleRecord> samples;

  const SettingResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string table() const;
  std::string samples_csv() const;
};

struct EvalContext {
  const Catalog& catalog;
  const SplitDataset& split;
  const TeacherModel& teacher;
  Stage stage = Stage::test;
};

/// Greedy-decodes the policy on instructions built per setting and aggregates
/// every metric; deterministic per seed.
MetricsReport run_eval(const Policy& policy, const EvalContext& ctx, const std::vector<EvalSetting>& settings,
                       std::uint64_t seed);

/// Oracle responder used by tests: returns label lists instead of decoding.
using Responder = std::function<std::vector<ListItem>(const InstructionSample&)>;
MetricsReport run_eval_with(const Responder& respond, const EvalContext& ctx, const std::vector<EvalSetting>& settings,
                            std::uint64_t seed);

}  // namespace recalign
