// SPDX-License-Identifier: Apache-2.0
#include "recalign/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "recalign/errors.hpp"

namespace recalign {

std::string to_string(IllegalReason r) {
  switch (r) {
    case IllegalReason::none: return "none";
    case IllegalReason::nonexistent: return "nonexistent";
    case IllegalReason::duplicate: return "duplicate";
    case IllegalReason::in_history: return "in_history";
    case IllegalReason::over_k: return "over_k";
  }
  return "?";
}

std::size_t ParsedList::num_illegal() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.legal() ? 0 : 1;
  return n;
}

ParsedList judge_legality(const std::vector<ListItem>& items, int k, const std::vector<ItemId>& history,
                          const Catalog& catalog) {
  ParsedList out;
  out.k = k;
  out.history = history;
  const std::unordered_set<ItemId> hist(history.begin(), history.end());
  std::unordered_set<ItemId> seen_ids;
  std::unordered_set<std::string> seen_raw;
  for (std::size_t i = 0; i < items.size(); ++i) {
    ParsedEntry e;
    e.raw = items[i].raw;
    const bool exists = items[i].id && catalog.has_item(*items[i].id);
    auto flag = [&](IllegalReason r) {
      if (e.reasons == 0) e.primary = r;
      e.reasons |= static_cast<unsigned>(r);
    };
    if (exists) {
      e.item = items[i].id;
      if (!seen_ids.insert(*e.item).second) flag(IllegalReason::duplicate);
    } else {
      flag(IllegalReason::nonexistent);
      if (!seen_raw.insert(e.raw).second) flag(IllegalReason::duplicate);
    }
    if (exists && hist.count(*e.item)) flag(IllegalReason::in_history);
    if (static_cast<int>(i) >= k) flag(IllegalReason::over_k);
    out.entries.push_back(std::move(e));
  }
  return out;
}

ParsedList judge_legality(const std::vector<ItemId>& items, int k, const std::vector<ItemId>& history,
                          const Catalog& catalog) {
  std::vector<ListItem> list;
  list.reserve(items.size());
  for (ItemId id : items) list.push_back({id, std::to_string(id)});
  return judge_legality(list, k, history, catalog);
}

ParsedList judge_titles(const std::vector<std::string>& titles, int k, const std::vector<ItemId>& history,
                        const Catalog& catalog) {
  std::vector<ListItem> list;
  list.reserve(titles.size());
  for (const auto& t : titles) list.push_back({catalog.find_title(t), t});
  return judge_legality(list, k, history, catalog);
}

void RewardConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!(eta >= 0.0)) throw ArgumentError("eta must be non-negative");
  if (!(list_amplification > 0.0)) throw ArgumentError("list_amplification must be positive");
}

std::vector<int> entry_ranks(const ParsedList& parsed, std::span<const int> rank_of) {
  std::vector<int> ranks(parsed.size(), 0);
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const auto& item = parsed.entries[i].item;
    if (item && static_cast<std::size_t>(*item) < rank_of.size()) ranks[i] = rank_of[static_cast<std::size_t>(*item)];
  }
  return ranks;
}

std::vector<double> preference_scores(const ParsedList& parsed, std::span<const int> ranks,
                                      std::optional<ItemId> target) {
  if (ranks.size() != parsed.size()) throw InternalError("preference_scores: rank vector length mismatch");
  std::vector<double> s(parsed.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const auto& e = parsed.entries[i];
    if (!e.legal()) {
      s[i] = -1.0;
    } else if (target && e.item == target) {
      s[i] = 1.0;
    } else {
      if (ranks[i] < 1) throw InternalError("preference_scores: missing rank for a legal item");
      s[i] = 1.0 / std::log2(ranks[i] + 3.0);
    }
  }
  return s;
}

ControlScores control_scores(const ParsedList& parsed, int k, const Intention& intention,
                             std::span<const double> scores, const Catalog& catalog) {
  const IntentionKind kind = intention.kind;
  if (kind == IntentionKind::I3 || kind == IntentionKind::Combo)
    throw ArgumentError(to_string(kind) + " intentions are not rewarded");
  if (scores.size() != parsed.size()) throw InternalError("control_scores: length mismatch");
  const double km = proportion_count(k, intention.m);
  const double k_out = k - km;
  ControlScores out;
  out.scores.assign(parsed.size(), 0.0);
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const auto& e = parsed.entries[i];
    if (!e.legal()) {
      out.scores[i] = -1.0;
      continue;
    }
    const bool in = intention.target && catalog.in_category(*e.item, *intention.target);
    const bool outside = !in;
    out.count_in += in ? 1 : 0;
    out.count_out += outside ? 1 : 0;
    double s = 0.0;
    switch (kind) {
      case IntentionKind::I0: s = scores[i]; break;
      case IntentionKind::I1_pos: s = in ? 1.0 : 0.0; break;
      case IntentionKind::I1_neg: s = outside ? 1.0 : 0.0; break;
      case IntentionKind::I2_le:
        if (out.count_out > k_out) s = 0.5;
        else if (outside) s = 1.0;
        else if (out.count_in < km) s = 0.5;
        else s = 0.0;
        break;
      case IntentionKind::I2_ge:
        if (out.count_in > k) s = 0.5;
        else if (in) s = 1.0;
        else if (out.count_out < k_out) s = 0.5;
        else s = 0.0;
        break;
      case IntentionKind::I2_approx:
        if (in) s = out.count_in <= km ? 1.0 : 0.0;
        else if (out.count_in >= km) s = 1.0;
        else if (out.count_out <= k_out) s = 0.5;
        else s = 0.0;
        break;
      default: break;
    }
    out.scores[i] = s;
  }
  return out;
}

std::vector<double> item_rewards(std::span<const double> scores, std::span<const double> scores_ctl, double alpha) {
  if (scores.size() != scores_ctl.size()) throw InternalError("item_rewards: length mismatch");
  std::vector<double> r(scores.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (1.0 - alpha) * scores[i] + alpha * scores_ctl[i];
  return r;
}

std::vector<double> position_discounted(std::span<const double> scores, const ParsedList& parsed) {
  if (scores.size() != parsed.size()) throw InternalError("position_discounted: length mismatch");
  std::vector<double> s(scores.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = parsed.entries[i].legal() ? scores[i] / std::log2(static_cast<double>(i + 1) + 2.0) : -1.0;
  return s;
}

double list_control_score(const Intention& intention, int k, int count_in, int count_out,
                          std::span<const double> scores_star) {
  const double km = proportion_count(k, intention.m);
  switch (intention.kind) {
    case IntentionKind::I0: {
      double sum = 0.0;
      for (double v : scores_star) sum += v;
      return sum;
    }
    case IntentionKind::I1_pos: return 1.0 / std::log2((k - count_in) + 2.0);
    case IntentionKind::I1_neg: return 1.0 / std::log2((k - count_out) + 2.0);
    case IntentionKind::I2_le: return 1.0 / std::log2(std::max(count_in - km, 0.0) + 2.0);
    case IntentionKind::I2_ge: return 1.0 / std::log2(std::max(km - count_in, 0.0) + 2.0);
    case IntentionKind::I2_approx: return 1.0 / std::log2(std::abs(count_in - km) + 2.0);
    default: throw ArgumentError(to_string(intention.kind) + " intentions are not rewarded");
  }
}

double list_reward(std::span<const double> scores_star, double score_ctl_list, double alpha) {
  double sum = 0.0;
  for (double v : scores_star) sum += v;
  return (1.0 - alpha) * sum + alpha * score_ctl_list;
}

RewardBreakdown compute_rewards(const ParsedList& parsed, const Intention& intention, std::optional<ItemId> target,
                                std::span<const int> rank_of, const Catalog& catalog, double alpha) {
  RewardBreakdown b;
  b.ranks = entry_ranks(parsed, rank_of);
  b.scores = preference_scores(parsed, b.ranks, target);
  auto ctl = control_scores(parsed, parsed.k, intention, b.scores, catalog);
  b.scores_ctl = std::move(ctl.scores);
  b.count_in = ctl.count_in;
  b.count_out = ctl.count_out;
  b.r_item = item_rewards(b.scores, b.scores_ctl, alpha);
  b.scores_star = position_discounted(b.scores, parsed);
  b.score_ctl_list = list_control_score(intention, parsed.k, b.count_in, b.count_out, b.scores_star);
  b.r_list = list_reward(b.scores_star, b.score_ctl_list, alpha);
  return b;
}

std::vector<double> assemble_token_rewards(const TokenLayout& layout, std::span<const double> r_item, double r_list,
                                           std::span<const double> kl, const RewardConfig& config) {
  const std::size_t n = layout.item_final.size();
  if (kl.size() != n || layout.sequence_final >= n) throw InternalError("assemble_token_rewards: layout mismatch");
  std::vector<double> r(n);
  for (std::size_t t = 0; t < n; ++t) {
    r[t] = -config.eta * kl[t];
    const int item = layout.item_final[t];
    if (item >= 0) {
      if (static_cast<std::size_t>(item) >= r_item.size()) throw InternalError("assemble_token_rewards: bad item index");
      r[t] += r_item[static_cast<std::size_t>(item)];
    }
  }
  r[layout.sequence_final] += config.list_amplification * r_list;
  return r;
}

void whiten(std::vector<std::vector<double>>& batch, double eps) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& v : batch)
    for (double x : v) {
      sum += x;
      ++n;
    }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& v : batch)
    for (double x : v) sq += (x - mean) * (x - mean);
  const double scale = 1.0 / std::sqrt(sq / static_cast<double>(n) + eps);
  for (auto& v : batch)
    for (double& x : v) x = (x - mean) * scale;
}

}  // namespace recalign
