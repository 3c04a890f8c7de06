// SPDX-License-Identifier: Apache-2.0
#include "recalign/instructions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "recalign/errors.hpp"

namespace recalign {

using nlohmann::json;

std::string to_string(IntentionKind kind) {
  switch (kind) {
    case IntentionKind::I0: return "I0";
    case IntentionKind::I1_pos: return "I1_pos";
    case IntentionKind::I1_neg: return "I1_neg";
    case IntentionKind::I2_le: return "I2_le";
    case IntentionKind::I2_ge: return "I2_ge";
    case IntentionKind::I2_approx: return "I2_approx";
    case IntentionKind::I3: return "I3";
    case IntentionKind::Combo: return "Combo";
  }
  return "?";
}

IntentionKind intention_kind_from_string(const std::string& s) {
  for (IntentionKind k : kSingleKinds)
    if (to_string(k) == s) return k;
  if (s == "Combo") return IntentionKind::Combo;
  throw ArgumentError("unknown intention kind '" + s + "'");
}

Intention Intention::item_wise(bool positive, CategoryId c) {
  Intention i;
  i.kind = positive ? IntentionKind::I1_pos : IntentionKind::I1_neg;
  i.target = c;
  return i;
}

Intention Intention::proportion(IntentionKind kind, CategoryId c, double m) {
  if (!is_list_wise(kind)) throw ArgumentError("proportion intention needs an I2 kind");
  Intention i;
  i.kind = kind;
  i.target = c;
  i.m = m;
  return i;
}

Intention Intention::search(CategoryId c) {
  Intention i;
  i.kind = IntentionKind::I3;
  i.target = c;
  return i;
}

Intention Intention::combo(Intention first, Intention second) {
  Intention i;
  i.kind = IntentionKind::Combo;
  i.parts = {std::move(first), std::move(second)};
  i.validate();
  return i;
}

void Intention::validate() const {
  switch (kind) {
    case IntentionKind::I0:
      if (target || !parts.empty()) throw ArgumentError("I0 intention carries no category");
      break;
    case IntentionKind::I1_pos:
    case IntentionKind::I1_neg:
    case IntentionKind::I3:
      if (!target || !parts.empty()) throw ArgumentError(to_string(kind) + " intention needs a target category");
      break;
    case IntentionKind::I2_le:
    case IntentionKind::I2_ge:
    case IntentionKind::I2_approx:
      if (!target || !parts.empty()) throw ArgumentError(to_string(kind) + " intention needs a target category");
      if (!(m >= 0.0 && m <= 1.0)) throw ArgumentError("proportion m must lie in [0, 1]");
      break;
    case IntentionKind::Combo:
      if (parts.size() != 2) throw ArgumentError("combo intention needs exactly two parts");
      for (const auto& p : parts) {
        if (p.kind == IntentionKind::Combo) throw ArgumentError("combo parts cannot be combos");
        p.validate();
      }
      break;
  }
}

double proportion_count(int k, double m) { return std::round(static_cast<double>(k) * m * 1e9) / 1e9; }

int draw_k(Rng& rng, int lo, int hi) {
  if (lo < 1 || hi < lo) throw ArgumentError("draw_k: need 1 <= lo <= hi");
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

CategoryId primary_category(const Catalog& catalog, ItemId item) { return catalog.categories_of(item).front(); }

CategoryId negative_control_category(const Catalog& catalog, const TeacherPredictions& preds, ItemId ground_truth,
                                     bool* used_fallback) {
  const auto& excluded = catalog.categories_of(ground_truth);
  auto is_excluded = [&](CategoryId c) { return std::binary_search(excluded.begin(), excluded.end(), c); };
  std::vector<int> hist(catalog.num_categories(), 0);
  for (ItemId id : preds.top_excluding_history(10))
    for (CategoryId c : catalog.categories_of(id))
      if (!is_excluded(c)) ++hist[static_cast<std::size_t>(c)];
  CategoryId best = -1;
  for (std::size_t c = 0; c < hist.size(); ++c)
    if (hist[c] > 0 && (best < 0 || hist[c] > hist[static_cast<std::size_t>(best)])) best = static_cast<CategoryId>(c);
  if (used_fallback) *used_fallback = best < 0;
  if (best >= 0) return best;
  std::size_t best_size = 0;
  for (std::size_t c = 0; c < catalog.num_categories(); ++c) {
    const auto cid = static_cast<CategoryId>(c);
    if (is_excluded(cid)) continue;
    const std::size_t size = catalog.items_in(cid).size();
    if (best < 0 || size > best_size) {
      best = cid;
      best_size = size;
    }
  }
  if (best < 0) throw InfeasibleSample("every category belongs to the ground-truth item");
  return best;
}

Intention make_intention_for_eval(IntentionKind kind, ItemId ground_truth, const TeacherPredictions& preds,
                                  const Catalog& catalog) {
  bool fallback = false;
  Intention out;
  switch (kind) {
    case IntentionKind::I0:
      return Intention::implicit();
    case IntentionKind::I1_pos:
      return Intention::item_wise(true, primary_category(catalog, ground_truth));
    case IntentionKind::I1_neg:
      out = Intention::item_wise(false, negative_control_category(catalog, preds, ground_truth, &fallback));
      break;
    case IntentionKind::I2_le:
      out = Intention::proportion(kind, negative_control_category(catalog, preds, ground_truth, &fallback),
                                  kEvalLeProportion);
      break;
    case IntentionKind::I2_approx:
      return Intention::proportion(kind, primary_category(catalog, ground_truth), kEvalApproxProportion);
    case IntentionKind::I2_ge:
      return Intention::proportion(kind, primary_category(catalog, ground_truth), kEvalGeProportion);
    default:
      throw ArgumentError("no evaluation construction for " + to_string(kind));
  }
  out.fallback = fallback;
  return out;
}

std::optional<int> proportion_target_count(IntentionKind kind, int k, double m, bool ground_truth_in,
                                           int available_in, int available_out) {
  const double km = proportion_count(k, m);
  const int gt_in = ground_truth_in ? 1 : 0;
  std::optional<int> best;
  for (int c = gt_in; c <= k - (1 - gt_in); ++c) {
    if (c - gt_in > available_in || (k - c) - (1 - gt_in) > available_out) continue;
    bool ok = false;
    switch (kind) {
      case IntentionKind::I2_le: ok = c <= km; break;
      case IntentionKind::I2_ge: ok = c >= km; break;
      case IntentionKind::I2_approx: ok = std::abs(c - km) <= 1.0; break;
      default: throw ArgumentError("proportion_target_count needs an I2 kind");
    }
    if (ok && (!best || std::abs(c - km) < std::abs(*best - km))) best = c;
  }
  return best;
}

std::vector<ItemId> augment_labels(const TeacherPredictions& preds, const Intention& intention, ItemId ground_truth,
                                   int k, const Catalog& catalog) {
  if (k < 1) throw ArgumentError("k must be at least 1");
  if (intention.kind == IntentionKind::I3 || intention.kind == IntentionKind::Combo)
    throw ArgumentError("augment_labels does not handle " + to_string(intention.kind));
  intention.validate();
  const std::unordered_set<ItemId> hist(preds.history.begin(), preds.history.end());
  std::vector<ItemId> candidates;
  candidates.reserve(preds.ranked.size());
  for (ItemId id : preds.ranked)
    if (id != ground_truth && !hist.count(id)) candidates.push_back(id);

  std::vector<ItemId> labels{ground_truth};
  labels.reserve(static_cast<std::size_t>(k));
  const auto need = static_cast<std::size_t>(k);
  auto fill = [&](auto&& accept) {
    for (ItemId id : candidates) {
      if (labels.size() >= need) break;
      if (accept(id)) labels.push_back(id);
    }
    if (labels.size() < need) throw InfeasibleSample("not enough candidates for " + to_string(intention.kind));
  };

  const CategoryId c = intention.target.value_or(-1);
  switch (intention.kind) {
    case IntentionKind::I0:
      fill([](ItemId) { return true; });
      break;
    case IntentionKind::I1_pos:
      if (!catalog.in_category(ground_truth, c)) throw InfeasibleSample("ground truth outside the positive category");
      fill([&](ItemId id) { return catalog.in_category(id, c); });
      break;
    case IntentionKind::I1_neg:
      if (catalog.in_category(ground_truth, c)) throw InfeasibleSample("ground truth inside the negative category");
      fill([&](ItemId id) { return !catalog.in_category(id, c); });
      break;
    default: {
      const bool gt_in = catalog.in_category(ground_truth, c);
      int avail_in = 0, avail_out = 0;
      for (ItemId id : candidates) (catalog.in_category(id, c) ? avail_in : avail_out)++;
      const auto target = proportion_target_count(intention.kind, k, intention.m, gt_in, avail_in, avail_out);
      if (!target) throw InfeasibleSample("no feasible category count for " + to_string(intention.kind));
      int want_in = *target - (gt_in ? 1 : 0);
      int want_out = (k - *target) - (gt_in ? 0 : 1);
      fill([&](ItemId id) {
        if (catalog.in_category(id, c)) {
          if (want_in == 0) return false;
          --want_in;
        } else {
          if (want_out == 0) return false;
          --want_out;
        }
        return true;
      });
      break;
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_history(const Catalog& catalog, const std::vector<ItemId>& history) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out += ", ";
    out += "'" + catalog.item(history[i]).title + "'";
  }
  return out;
}

std::string render_response(const Catalog& catalog, const std::vector<ItemId>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + catalog.item(items[i]).title;
  }
  return out;
}

std::vector<std::string> split_response(const std::string& response) {
  std::vector<std::string> titles;
  std::istringstream in(response);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i + 1 < line.size() && line[i] == '.' && line[i + 1] == ' ') line = line.substr(i + 2);
    titles.push_back(line);
  }
  return titles;
}

std::string intention_phrase(const Intention& intention, const Catalog& catalog, const TemplateSet& templates,
                             Rng& rng) {
  auto pick = [&](const std::string& section) -> const std::string& {
    const auto& options = templates.section(section);
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  };
  std::map<std::string, std::string> values;
  if (intention.target) values["target_category"] = catalog.category_name(*intention.target);
  switch (intention.kind) {
    case IntentionKind::I1_pos:
    case IntentionKind::I3:
      return substitute(pick("positive"), values);
    case IntentionKind::I1_neg:
      return substitute(pick("negative"), values);
    case IntentionKind::I2_le:
    case IntentionKind::I2_ge:
    case IntentionKind::I2_approx:
      values["category_proportion"] = format_proportion(intention.m);
      return substitute(templates.first(to_string(intention.kind) + "_phrase"), values);
    case IntentionKind::Combo:
      return intention_phrase(intention.parts.at(0), catalog, templates, rng) + " and " +
             intention_phrase(intention.parts.at(1), catalog, templates, rng);
    case IntentionKind::I0:
      break;
  }
  throw TemplateError("I0 has no intention phrase");
}

std::string render_prompt(const InstructionSample& sample, const Catalog& catalog, const TemplateSet& templates,
                          Rng& rng) {
  const Intention& in = sample.intention;
  std::map<std::string, std::string> values;
  values["item_count"] = std::to_string(sample.k);
  values["history"] = render_history(catalog, sample.history);
  if (in.target) values["target_category"] = catalog.category_name(*in.target);
  switch (in.kind) {
    case IntentionKind::I0:
      return substitute(templates.first("I0"), values);
    case IntentionKind::I1_pos:
    case IntentionKind::I1_neg:
    case IntentionKind::Combo:
      values["synthetic_intention"] = intention_phrase(in, catalog, templates, rng);
      return substitute(templates.first("I1"), values);
    case IntentionKind::I2_le:
    case IntentionKind::I2_ge:
    case IntentionKind::I2_approx:
      values["category_proportion"] = format_proportion(in.m);
      return substitute(templates.first(to_string(in.kind)), values);
    case IntentionKind::I3:
      values["synthetic_intention"] = intention_phrase(in, catalog, templates, rng);
      return substitute(templates.first("I3"), values);
  }
  throw TemplateError("unhandled intention kind");
}

// ---------------------------------------------------------------------------
// Dataset generation

InstructionSample gen_sample(IntentionKind kind, const UserSplit& user, const SampleContext& ctx, Rng& rng, int k_lo,
                             int k_hi, std::optional<double> fixed_m) {
  InstructionSample s;
  s.k = draw_k(rng, k_lo, k_hi);
  if (kind == IntentionKind::Combo) throw ArgumentError("combo samples are evaluation-only");
  if (kind == IntentionKind::I3) {
    const auto c = static_cast<CategoryId>(
        std::uniform_int_distribution<std::size_t>(0, ctx.catalog.num_categories() - 1)(rng));
    auto pool = ctx.catalog.items_in(c);
    if (pool.size() < static_cast<std::size_t>(s.k)) throw InfeasibleSample("category smaller than k");
    std::shuffle(pool.begin(), pool.end(), rng);
    s.labels.assign(pool.begin(), pool.begin() + s.k);
    s.intention = Intention::search(c);
  } else {
    if (!SplitDataset::usable(user, ctx.stage)) throw InfeasibleSample("user has no history for this stage");
    s.user = user.user;
    s.history = ctx.split.history(user, ctx.stage);
    const ItemId gt = SplitDataset::target(user, ctx.stage);
    s.ground_truth = gt;
    const TeacherPredictions preds = ctx.teacher.predict_full_ranking(s.history);
    s.intention = make_intention_for_eval(kind, gt, preds, ctx.catalog);
    if (is_list_wise(kind))
      s.intention.m = fixed_m ? *fixed_m : static_cast<double>(std::uniform_int_distribution<int>(1, 9)(rng)) / 10.0;
    s.labels = augment_labels(preds, s.intention, gt, s.k, ctx.catalog);
  }
  s.prompt = render_prompt(s, ctx.catalog, ctx.templates, rng);
  s.response = render_response(ctx.catalog, s.labels);
  return s;
}

GeneratedDataset build_training_set(const SampleContext& ctx, const DatasetQuota& quotas, std::uint64_t seed,
                                    int k_lo, int k_hi, int retry_cap) {
  std::vector<const UserSplit*> usable;
  for (const auto& u : ctx.split.users)
    if (SplitDataset::usable(u, ctx.stage)) usable.push_back(&u);

  std::vector<std::pair<IntentionKind, std::size_t>> plan;
  plan.emplace_back(IntentionKind::I0, quotas.i0);
  plan.emplace_back(IntentionKind::I1_pos, quotas.i1 - quotas.i1 / 2);
  plan.emplace_back(IntentionKind::I1_neg, quotas.i1 / 2);
  plan.emplace_back(IntentionKind::I2_le, quotas.i2 / 3);
  plan.emplace_back(IntentionKind::I2_ge, quotas.i2 / 3);
  plan.emplace_back(IntentionKind::I2_approx, quotas.i2 - 2 * (quotas.i2 / 3));
  plan.emplace_back(IntentionKind::I3, quotas.i3);

  GeneratedDataset out;
  for (const auto& [kind, count] : plan) {
    for (std::size_t j = 0; j < count; ++j) {
      bool done = false;
      for (int attempt = 0; attempt <= retry_cap && !done; ++attempt) {
        Rng rng = make_stream({seed, static_cast<std::uint64_t>(kind), j, static_cast<std::uint64_t>(attempt)});
        const UserSplit* user = nullptr;
        if (kind != IntentionKind::I3) {
          if (usable.empty()) break;
          user = (kind == IntentionKind::I0 && attempt == 0)
                     ? usable[j % usable.size()]
                     : usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
        }
        static const UserSplit kNoUser{};
        try {
          out.samples.push_back(gen_sample(kind, user ? *user : kNoUser, ctx, rng, k_lo, k_hi));
          done = true;
        } catch (const InfeasibleSample&) {
        }
      }
      if (!done) ++out.skipped;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// json-lines I/O

namespace {

json intention_to_json(const Intention& in) {
  json j;
  j["kind"] = to_string(in.kind);
  j["target_category"] = in.target ? json(*in.target) : json(nullptr);
  j["m"] = in.m;
  return j;
}

Intention intention_from_json(const json& j) {
  Intention in;
  in.kind = intention_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("target_category") && !j.at("target_category").is_null())
    in.target = j.at("target_category").get<CategoryId>();
  in.m = j.value("m", 0.0);
  return in;
}

}  // namespace

std::string sample_to_json_line(const InstructionSample& s) {
  json j = intention_to_json(s.intention);
  j["user"] = s.user;
  j["k"] = s.k;
  j["history"] = s.history;
  j["labels"] = s.labels;
  j["ground_truth"] = s.ground_truth ? json(*s.ground_truth) : json(nullptr);
  j["fallback"] = s.intention.fallback;
  if (s.intention.kind == IntentionKind::Combo) {
    j["parts"] = json::array();
    for (const auto& p : s.intention.parts) j["parts"].push_back(intention_to_json(p));
  }
  j["prompt"] = s.prompt;
  j["response"] = s.response;
  return j.dump();
}

InstructionSample sample_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  InstructionSample s;
  s.intention = intention_from_json(j);
  s.intention.fallback = j.value("fallback", false);
  if (s.intention.kind == IntentionKind::Combo)
    for (const auto& p : j.at("parts")) s.intention.parts.push_back(intention_from_json(p));
  s.user = j.value("user", -1);
  s.k = j.at("k").get<int>();
  s.history = j.value("history", std::vector<ItemId>{});
  s.labels = j.value("labels", std::vector<ItemId>{});
  if (j.contains("ground_truth") && !j.at("ground_truth").is_null()) s.ground_truth = j.at("ground_truth").get<ItemId>();
  s.prompt = j.value("prompt", "");
  s.response = j.value("response", "");
  return s;
}

void write_dataset(const std::filesystem::path& path, const std::vector<InstructionSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
}

std::vector<InstructionSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<InstructionSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json_line(line));
    } catch (const std::exception& e) {
      throw ParseError(path.filename().string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace recalign
