// SPDX-License-Identifier: Apache-2.0
#include "recalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "recalign/errors.hpp"
#include "recalign/policy.hpp"
#include "recalign/teacher.hpp"

namespace recalign {

using nlohmann::json;

HrNdcg hr_ndcg(const ParsedList& list, ItemId target, int K) {
  if (K < 1) throw ArgumentError("K must be at least 1");
  const std::size_t n = std::min(list.size(), static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < n; ++i)
    if (list.entries[i].item == target) return {1.0, 1.0 / std::log2(static_cast<double>(i + 1) + 1.0)};
  return {};
}

int count_in_category(const ParsedList& list, CategoryId c, int k, const Catalog& catalog) {
  int count = 0;
  const std::size_t n = std::min(list.size(), static_cast<std::size_t>(std::max(k, 0)));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = list.entries[i];
    if (e.legal() && catalog.in_category(*e.item, c)) ++count;
  }
  return count;
}

double tcp(const ParsedList& list, CategoryId c, int K, const Catalog& catalog) {
  if (K < 1) throw ArgumentError("K must be at least 1");
  return count_in_category(list, c, K, catalog) / static_cast<double>(K);
}

bool cpa_accepts(IntentionKind kind, int count_in, int k, double m) {
  const double km = proportion_count(k, m);
  switch (kind) {
    case IntentionKind::I2_le: return count_in <= km;
    case IntentionKind::I2_ge: return count_in >= km;
    case IntentionKind::I2_approx: return std::abs(count_in - km) <= 1.0;
    default: throw ArgumentError("CPA is defined for proportion intentions only");
  }
}

double cpa(const ParsedList& list, const Intention& intention, int k, const Catalog& catalog) {
  if (!is_list_wise(intention.kind) || !intention.target)
    throw ArgumentError("CPA is defined for proportion intentions only");
  return cpa_accepts(intention.kind, count_in_category(list, *intention.target, k, catalog), k, intention.m) ? 1.0
                                                                                                           : 0.0;
}

double combinatorial_tcp(const ParsedList& list, CategoryId c1, CategoryId c2, int K, const Catalog& catalog) {
  if (K < 1) throw ArgumentError("K must be at least 1");
  int count = 0;
  const std::size_t n = std::min(list.size(), static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = list.entries[i];
    if (e.legal() && catalog.in_category(*e.item, c1) && !catalog.in_category(*e.item, c2)) ++count;
  }
  return count / static_cast<double>(K);
}

Formatting formatting_of(const ParsedList& list) {
  Formatting f;
  f.correct_count = static_cast<int>(list.size()) == list.k ? 1.0 : 0.0;
  const std::size_t slots = std::min(list.size(), static_cast<std::size_t>(std::max(list.k, 0)));
  if (slots == 0) return f;
  for (std::size_t i = 0; i < slots; ++i) {
    const auto& e = list.entries[i];
    f.repeat_item += e.has(IllegalReason::duplicate) ? 1.0 : 0.0;
    f.non_exist += e.has(IllegalReason::nonexistent) ? 1.0 : 0.0;
    f.in_history += e.has(IllegalReason::in_history) ? 1.0 : 0.0;
  }
  const double inv = 1.0 / static_cast<double>(slots);
  f.repeat_item *= inv;
  f.non_exist *= inv;
  f.in_history *= inv;
  return f;
}

Formatting formatting_metrics(const std::vector<ParsedList>& lists) {
  Formatting sum;
  for (const auto& l : lists) {
    const Formatting f = formatting_of(l);
    sum.correct_count += f.correct_count;
    sum.repeat_item += f.repeat_item;
    sum.non_exist += f.non_exist;
    sum.in_history += f.in_history;
  }
  if (!lists.empty()) {
    const double inv = 1.0 / static_cast<double>(lists.size());
    sum.correct_count *= inv;
    sum.repeat_item *= inv;
    sum.non_exist *= inv;
    sum.in_history *= inv;
  }
  return sum;
}

std::optional<double> control_accuracy(const ParsedList& list, const Intention& intention, const Catalog& catalog) {
  const int k = list.k;
  switch (intention.kind) {
    case IntentionKind::I1_pos: return tcp(list, *intention.target, k, catalog);
    case IntentionKind::I1_neg: return 1.0 - tcp(list, *intention.target, k, catalog);
    case IntentionKind::I2_le:
    case IntentionKind::I2_ge:
    case IntentionKind::I2_approx: return cpa(list, intention, k, catalog);
    default: return std::nullopt;
  }
}

std::vector<EvalSetting> default_eval_settings(std::size_t n) {
  return {
      {"I0", IntentionKind::I0, IntentionKind::I1_pos, 10, 10, 10, n},
      {"I1_pos", IntentionKind::I1_pos, IntentionKind::I1_pos, 10, 10, 10, n},
      {"I1_neg", IntentionKind::I1_neg, IntentionKind::I1_pos, 10, 10, 10, n},
      {"I2_le20", IntentionKind::I2_le, IntentionKind::I1_pos, 10, 10, 10, n},
      {"I2_approx30", IntentionKind::I2_approx, IntentionKind::I1_pos, 10, 10, 10, n},
      {"I2_ge30", IntentionKind::I2_ge, IntentionKind::I1_pos, 10, 10, 10, n},
      {"format_I0", IntentionKind::I0, IntentionKind::I1_pos, kFormatKMin, kFormatKMax, 10, n},
  };
}

std::vector<EvalSetting> combo_eval_settings(std::size_t n) {
  return {
      {"combo_pos_neg", IntentionKind::Combo, IntentionKind::I1_pos, 10, 10, 10, n},
      {"combo_le20_neg", IntentionKind::Combo, IntentionKind::I2_le, 10, 10, 10, n},
  };
}

const SettingResult* MetricsReport::find(const std::string& name) const {
  for (const auto& s : settings)
    if (s.setting.name == name) return &s;
  return nullptr;
}

namespace {

struct Accumulator {
  std::size_t n = 0;
  double hr = 0, ndcg = 0, tcp = 0, cpa = 0, tc1n2p = 0, tc2p = 0;
  bool has_tcp = false, has_cpa = false, has_combo = false;
  std::vector<ParsedList> lists;

  SettingMetrics finish() const {
    SettingMetrics m;
    m.n = n;
    if (n == 0) return m;
    const double inv = 1.0 / static_cast<double>(n);
    m.hr = hr * inv;
    m.ndcg = ndcg * inv;
    if (has_tcp) m.tcp = tcp * inv;
    if (has_cpa) m.cpa = cpa * inv;
    if (has_combo) {
      m.tc1n2p = tc1n2p * inv;
      m.tc2p = tc2p * inv;
    }
    m.formatting = formatting_metrics(lists);
    return m;
  }
};

// Category the setting's TCP is measured against.
std::optional<CategoryId> tcp_category(const Intention& in) {
  if (in.kind == IntentionKind::Combo) return in.parts.at(0).target;
  if (is_item_wise(in.kind) || is_list_wise(in.kind)) return in.target;
  return std::nullopt;
}

SampleRecord score_into(Accumulator& acc, const ParsedList& list, const Intention& measured, ItemId gt, int K,
                        const Catalog& catalog) {
  SampleRecord r;
  const HrNdcg h = hr_ndcg(list, gt, K);
  r.hr = h.hr;
  r.ndcg = h.ndcg;
  acc.hr += h.hr;
  acc.ndcg += h.ndcg;
  if (const auto c = tcp_category(measured)) {
    r.tcp = tcp(list, *c, K, catalog);
    acc.tcp += *r.tcp;
    acc.has_tcp = true;
  }
  const Intention* prop = nullptr;
  if (is_list_wise(measured.kind)) prop = &measured;
  if (measured.kind == IntentionKind::Combo && is_list_wise(measured.parts.at(0).kind)) prop = &measured.parts[0];
  if (prop) {
    r.cpa = cpa(list, *prop, list.k, catalog);
    acc.cpa += *r.cpa;
    acc.has_cpa = true;
  }
  if (measured.kind == IntentionKind::Combo) {
    const CategoryId c1 = *measured.parts.at(0).target, c2 = *measured.parts.at(1).target;
    acc.tc1n2p += combinatorial_tcp(list, c1, c2, K, catalog);
    acc.tc2p += tcp(list, c2, K, catalog);
    acc.has_combo = true;
  }
  acc.lists.push_back(list);
  ++acc.n;
  return r;
}

std::optional<Intention> build_intention(const EvalSetting& setting, ItemId gt, const TeacherPredictions& preds,
                                         const Catalog& catalog) {
  if (setting.kind == IntentionKind::I3) throw ArgumentError("item search is not an evaluation setting");
  if (setting.kind != IntentionKind::Combo) return make_intention_for_eval(setting.kind, gt, preds, catalog);
  const CategoryId c1 = primary_category(catalog, gt);
  Intention first;
  if (setting.combo_first == IntentionKind::I1_pos)
    first = Intention::item_wise(true, c1);
  else if (setting.combo_first == IntentionKind::I2_le)
    first = Intention::proportion(IntentionKind::I2_le, c1, kEvalLeProportion);
  else
    throw ArgumentError("combo settings start with a positive or <= proportion control");
  bool fallback = false;
  const CategoryId c2 = negative_control_category(catalog, preds, gt, &fallback);
  if (c2 == c1) return std::nullopt;
  Intention combo = Intention::combo(first, Intention::item_wise(false, c2));
  combo.fallback = fallback;
  return combo;
}

json metrics_json(const SettingMetrics& m) {
  json j = {{"n", m.n},
            {"hr", m.hr},
            {"ndcg", m.ndcg},
            {"correct_count", m.formatting.correct_count},
            {"repeat_item", m.formatting.repeat_item},
            {"non_exist", m.formatting.non_exist},
            {"in_history", m.formatting.in_history}};
  auto opt = [&](const char* key, const std::optional<double>& v) { j[key] = v ? json(*v) : json(nullptr); };
  opt("tcp", m.tcp);
  opt("cpa", m.cpa);
  opt("tc1n2p", m.tc1n2p);
  opt("tc2p", m.tc2p);
  return j;
}

SettingMetrics metrics_from_json(const json& j) {
  SettingMetrics m;
  m.n = j.at("n").get<std::size_t>();
  m.hr = j.at("hr").get<double>();
  m.ndcg = j.at("ndcg").get<double>();
  m.formatting.correct_count = j.at("correct_count").get<double>();
  m.formatting.repeat_item = j.at("repeat_item").get<double>();
  m.formatting.non_exist = j.at("non_exist").get<double>();
  m.formatting.in_history = j.at("in_history").get<double>();
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  m.tcp = opt("tcp");
  m.cpa = opt("cpa");
  m.tc1n2p = opt("tc1n2p");
  m.tc2p = opt("tc2p");
  return m;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string cell(const std::optional<double>& v, const std::optional<double>& base, bool with_base) {
  if (!v) return "-";
  std::string s = fmt3(*v);
  if (with_base && base) s += " (" + fmt3(*base) + ")";
  return s;
}

}  // namespace

json MetricsReport::to_json() const {
  json j;
  j["settings"] = json::array();
  for (const auto& r : settings) {
    j["settings"].push_back({{"name", r.setting.name},
                             {"kind", to_string(r.setting.kind)},
                             {"combo_first", to_string(r.setting.combo_first)},
                             {"k_lo", r.setting.k_lo},
                             {"k_hi", r.setting.k_hi},
                             {"K", r.setting.K},
                             {"n_samples", r.setting.n_samples},
                             {"controlled", metrics_json(r.controlled)},
                             {"baseline", metrics_json(r.baseline)}});
  }
  j["note"] = "repeat_item, non_exist and in_history are per-slot rates over the first min(N, k) emitted items";
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  for (const auto& s : j.at("settings")) {
    SettingResult res;
    res.setting.name = s.at("name").get<std::string>();
    res.setting.kind = intention_kind_from_string(s.at("kind").get<std::string>());
    res.setting.combo_first = intention_kind_from_string(s.value("combo_first", std::string("I1_pos")));
    res.setting.k_lo = s.at("k_lo").get<int>();
    res.setting.k_hi = s.at("k_hi").get<int>();
    res.setting.K = s.at("K").get<int>();
    res.setting.n_samples = s.at("n_samples").get<std::size_t>();
    res.controlled = metrics_from_json(s.at("controlled"));
    res.baseline = metrics_from_json(s.at("baseline"));
    r.settings.push_back(std::move(res));
  }
  return r;
}

std::string MetricsReport::table() const {
  const std::vector<std::string> head = {"setting", "n",      "HR@K",     "NDCG@K",   "TCP@K",  "CPA",
                                         "Correct", "Repeat", "NonExist", "InHistory", "TC1-2P", "TC2P"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : settings) {
    const auto& c = r.controlled;
    const auto& b = r.baseline;
    const bool wb = r.setting.kind != IntentionKind::I0;
    rows.push_back({r.setting.name, std::to_string(c.n), cell(c.hr, b.hr, wb), cell(c.ndcg, b.ndcg, wb),
                    cell(c.tcp, b.tcp, wb), cell(c.cpa, b.cpa, wb), fmt3(c.formatting.correct_count),
                    fmt3(c.formatting.repeat_item), fmt3(c.formatting.non_exist), fmt3(c.formatting.in_history),
                    cell(c.tc1n2p, b.tc1n2p, wb), cell(c.tc2p, b.tc2p, wb)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << row[i] << std::string(width[i] - row[i].size(), ' ');
      out << (i + 1 < row.size() ? "  " : "\n");
    }
  };
  line(head);
  for (const auto& row : rows) line(row);
  out << "\nValues in parentheses come from the same users and k with the control signal removed.\n"
      << "Repeat, NonExist and InHistory are per-slot rates over the first min(N, k) emitted items.\n";
  return out.str();
}

std::string MetricsReport::samples_csv() const {
  std::ostringstream out;
  out << "setting,user,k,intention,baseline,hr,ndcg,tcp,cpa,tokens\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt3(*v) : std::string(); };
  for (const auto& s : samples) {
    out << s.setting << ',' << s.user << ',' << s.k << ',' << s.intention << ',' << (s.baseline ? 1 : 0) << ','
        << fmt3(s.hr) << ',' << fmt3(s.ndcg) << ',' << opt(s.tcp) << ',' << opt(s.cpa) << ',';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << (i ? " " : "") << s.tokens[i];
    out << '\n';
  }
  return out.str();
}

MetricsReport run_eval_with(const Responder& respond, const EvalContext& ctx, const std::vector<EvalSetting>& settings,
                            std::uint64_t seed) {
  MetricsReport report;
  if (settings.empty()) return report;
  if (ctx.teacher.num_items() != ctx.catalog.num_items()) throw ArgumentError("teacher and catalog sizes differ");
  std::vector<const UserSplit*> users;
  for (const auto& u : ctx.split.users)
    if (SplitDataset::usable(u, ctx.stage)) users.push_back(&u);
  Rng pick = make_stream({seed, 0x6576616cULL});
  std::shuffle(users.begin(), users.end(), pick);

  // Teacher rankings are shared across settings.
  std::vector<std::optional<TeacherPredictions>> preds(users.size());

  for (const auto& setting : settings) {
    if (setting.K < 1 || setting.K > setting.k_lo) throw ArgumentError("evaluation needs 1 <= K <= k");
    SettingResult result;
    result.setting = setting;
    Accumulator ctl, base;
    const std::uint64_t tag = fnv1a(setting.name.data(), setting.name.size());
    const std::size_t n = std::min(setting.n_samples, users.size());
    for (std::size_t j = 0; j < n; ++j) {
      const UserSplit& u = *users[j];
      Rng rng = make_stream({seed, tag, j});
      InstructionSample sample;
      sample.user = u.user;
      sample.k = draw_k(rng, setting.k_lo, setting.k_hi);
      sample.history = ctx.split.history(u, ctx.stage);
      const ItemId gt = SplitDataset::target(u, ctx.stage);
      sample.ground_truth = gt;
      if (!preds[j]) preds[j] = ctx.teacher.predict_full_ranking(sample.history);
      const auto intention = build_intention(setting, gt, *preds[j], ctx.catalog);
      if (!intention) continue;
      sample.intention = *intention;
      if (sample.intention.kind != IntentionKind::Combo) {
        try {
          sample.labels = augment_labels(*preds[j], sample.intention, gt, sample.k, ctx.catalog);
        } catch (const InfeasibleSample&) {
        }
      }
      InstructionSample plain = sample;
      plain.intention = Intention::implicit();
      try {
        plain.labels = augment_labels(*preds[j], plain.intention, gt, plain.k, ctx.catalog);
      } catch (const InfeasibleSample&) {
        plain.labels.clear();
      }

      for (int pass = 0; pass < 2; ++pass) {
        const InstructionSample& s = pass == 0 ? sample : plain;
        const auto items = respond(s);
        const ParsedList list = judge_legality(items, s.k, s.history, ctx.catalog);
        SampleRecord rec = score_into(pass == 0 ? ctl : base, list, sample.intention, gt, setting.K, ctx.catalog);
        rec.setting = setting.name;
        rec.user = u.user;
        rec.k = s.k;
        rec.intention = to_string(s.intention.kind);
        rec.baseline = pass == 1;
        for (const auto& it : items) rec.tokens.push_back(it.id ? *it.id : -1);
        report.samples.push_back(std::move(rec));
      }
    }
    result.controlled = ctl.finish();
    result.baseline = base.finish();
    report.settings.push_back(std::move(result));
  }
  return report;
}

MetricsReport run_eval(const Policy& policy, const EvalContext& ctx, const std::vector<EvalSetting>& settings,
                       std::uint64_t seed) {
  if (policy.config().n_items != ctx.catalog.num_items()) throw ArgumentError("policy and catalog sizes differ");
  const Responder greedy = [&policy](const InstructionSample& s) {
    return trajectory_items(policy, greedy_decode(policy, policy_input(s)));
  };
  return run_eval_with(greedy, ctx, settings, seed);
}

}  // namespace recalign
