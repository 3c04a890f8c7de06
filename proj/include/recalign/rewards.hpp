// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"

namespace recalign {

enum class IllegalReason : std::uint8_t { none = 0, nonexistent = 1, duplicate = 2, in_history = 4, over_k = 8 };

std::string to_string(IllegalReason r);

/// One generated entry before judging: a resolved id, or only the raw text
/// when the title (or token) does not name a catalog item.
struct ListItem {
  std::optional<ItemId> id;
  std::string raw;
};

struct ParsedEntry {
  std::optional<ItemId> item;  // set only when the entry names a catalog item
  std::string raw;
  unsigned reasons = 0;  // bitmask of IllegalReason
  IllegalReason primary = IllegalReason::none;

  bool legal() const noexcept { return reasons == 0; }
  bool has(IllegalReason r) const noexcept { return (reasons & static_cast<unsigned>(r)) != 0; }
};

struct ParsedList {
  std::vector<ParsedEntry> entries;
  int k = 0;
  std::vector<ItemId> history;

  std::size_t size() const noexcept { return entries.size(); }
  std::size_t num_illegal() const;
};

/// Flags every entry: nonexistent, duplicate of any earlier entry, present in
/// the history, or beyond position k. Unresolved entries compare by raw text.
ParsedList judge_legality(const std::vector<ListItem>& items, int k, const std::vector<ItemId>& history,
                          const Catalog& catalog);
/// Convenience overload; ids outside the catalog count as nonexistent.
ParsedList judge_legality(const std::vector<ItemId>& items, int k, const std::vector<ItemId>& history,
                          const Catalog& catalog);
/// Resolves titles through the catalog first.
ParsedList judge_titles(const std::vector<std::string>& titles, int k, const std::vector<ItemId>& history,
                        const Catalog& catalog);

struct RewardConfig {
  double alpha = 0.5;
  double eta = 0.3;
  double list_amplification = 10.0;
  bool whitening = false;  // whiten assembled token rewards per batch

  void validate() const;
};

/// Teacher rank per entry (0 where the entry names no item).
std::vector<int> entry_ranks(const ParsedList& parsed, std::span<const int> rank_of);

std::vector<double> preference_scores(const ParsedList& parsed, std::span<const int> ranks,
                                      std::optional<ItemId> target);

struct ControlScores {
  std::vector<double> scores;
  int count_in = 0;
  int count_out = 0;
};

ControlScores control_scores(const ParsedList& parsed, int k, const Intention& intention,
                             std::span<const double> scores, const Catalog& catalog);

std::vector<double> item_rewards(std::span<const double> scores, std::span<const double> scores_ctl, double alpha);

std::vector<double> position_discounted(std::span<const double> scores, const ParsedList& parsed);

double list_control_score(const Intention& intention, int k, int count_in, int count_out,
                          std::span<const double> scores_star);

double list_reward(std::span<const double> scores_star, double score_ctl_list, double alpha);

struct RewardBreakdown {
  std::vector<int> ranks;
  std::vector<double> scores;
  std::vector<double> scores_ctl;
  std::vector<double> r_item;
  std::vector<double> scores_star;
  int count_in = 0;
  int count_out = 0;
  double score_ctl_list = 0.0;
  double r_list = 0.0;
};

RewardBreakdown compute_rewards(const ParsedList& parsed, const Intention& intention, std::optional<ItemId> target,
                                std::span<const int> rank_of, const Catalog& catalog, double alpha);

/// Per-token placement: item_final[t] is the index of the item whose last
/// token is t (or -1); sequence_final is the ending token.
struct TokenLayout {
  std::vector<int> item_final;
  std::size_t sequence_final = 0;
};

/// Un-whitened per-token rewards: -eta*KL everywhere, R_item at item-final
/// tokens, list_amplification*R_list at the ending token.
std::vector<double> assemble_token_rewards(const TokenLayout& layout, std::span<const double> r_item, double r_list,
                                           std::span<const double> kl, const RewardConfig& config);

/// Shifts and scales all rewards of a batch to zero mean and unit variance.
void whiten(std::vector<std::vector<double>>& batch, double eps = 1e-8);

}  // namespace recalign
