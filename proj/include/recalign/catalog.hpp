// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace recalign {

using ItemId = std::int32_t;
using CategoryId = std::int32_t;
using UserIndex = std::int32_t;

struct Item {
  ItemId id = 0;
  std::string external_id;
  std::string title;
  std::vector<CategoryId> categories;  // sorted, unique, non-empty

  bool operator==(const Item&) const = default;
};

struct UserSequence {
  std::string external_id;
  std::vector<ItemId> items;  // chronological

  bool operator==(const UserSequence&) const = default;
};

/// Items, category names and chronological user sequences. Immutable once
/// constructed; the constructor validates every cross reference.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<Item> items, std::vector<std::string> category_names,
          std::vector<UserSequence> users);

  const std::vector<Item>& items() const noexcept { return items_; }
  const std::vector<std::string>& category_names() const noexcept { return category_names_; }
  const std::vector<UserSequence>& users() const noexcept { return users_; }

  std::size_t num_items() const noexcept { return items_.size(); }
  std::size_t num_categories() const noexcept { return category_names_.size(); }
  std::size_t num_users() const noexcept { return users_.size(); }

  bool has_item(ItemId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < items_.size();
  }
  const Item& item(ItemId id) const;

  /// Category set of an item. Throws LookupError for unknown ids.
  const std::vector<CategoryId>& categories_of(ItemId id) const;

  /// Set membership; unknown items are never members.
  bool in_category(ItemId id, CategoryId c) const noexcept {
    if (!has_item(id) || c < 0 || static_cast<std::size_t>(c) >= num_categories()) return false;
    return membership_[static_cast<std::size_t>(id) * num_categories() + static_cast<std::size_t>(c)] != 0;
  }

  /// Items carrying category c, ascending id.
  const std::vector<ItemId>& items_in(CategoryId c) const;

  std::optional<ItemId> find_title(std::string_view title) const;
  const std::string& category_name(CategoryId c) const;
  std::optional<CategoryId> find_category(std::string_view name) const;

  bool operator==(const Catalog& o) const {
    return items_ == o.items_ && category_names_ == o.category_names_ && users_ == o.users_;
  }

 private:
  std::vector<Item> items_;
  std::vector<std::string> category_names_;
  std::vector<UserSequence> users_;
  std::vector<std::uint8_t> membership_;
  std::vector<std::vector<ItemId>> by_category_;
  std::unordered_map<std::string, ItemId> title_index_;
};

enum class InteractionFormat { tabular, json_lines };

/// Reads an interactions file (`user <TAB> item <TAB> timestamp`, or json-lines
/// with `user`, `item`, optional `timestamp`) and a json-lines item metadata file
/// (`id`, `title`, `categories`). Ids are assigned in first-seen order; each
/// user's sequence is sorted by timestamp (stable, so file order breaks ties).
Catalog load_interactions(const std::filesystem::path& interactions,
                          const std::filesystem::path& item_metadata,
                          InteractionFormat format = InteractionFormat::tabular);

/// Writes the two files read by load_interactions. Timestamps are the
/// within-user positions, so a reload reproduces the same catalog.
void save_catalog(const Catalog& catalog, const std::filesystem::path& interactions,
                  const std::filesystem::path& item_metadata);

struct SynthConfig {
  std::size_t n_items = 500;
  std::size_t n_categories = 10;
  std::size_t n_users = 2000;
  std::uint64_t seed = 1;
  std::size_t min_length = 6;
  std::size_t max_length = 24;
  std::size_t successors = 4;     // out-degree of the item transition kernel
  double follow_transition = 0.6;  // probability of taking a kernel step
  double category_concentration = 0.3;
};

/// Synthetic catalog: items carry 1 to 3 categories, users draw from a
/// personal category mixture blended with a first-order transition kernel.
Catalog synth_catalog(const SynthConfig& config);
Catalog synth_catalog(std::size_t n_items, std::size_t n_categories, std::size_t n_users,
                      std::uint64_t seed);

struct UserSplit {
  UserIndex user = 0;
  std::vector<ItemId> train;  // items 1..n-2
  ItemId valid = 0;           // item n-1
  ItemId test = 0;            // item n
};

enum class Stage { train, valid, test };

/// Leave-one-out split. Users with fewer than three interactions are skipped.
struct SplitDataset {
  std::vector<UserSplit> users;
  std::size_t max_history = 10;
  std::size_t skipped = 0;

  /// The (truncated) history window preceding the held-out item of a stage.
  /// For Stage::train the held-out item is the last training item.
  std::vector<ItemId> history(const UserSplit& u, Stage stage) const;
  /// The held-out item of a stage.
  static ItemId target(const UserSplit& u, Stage stage);
  /// True when the stage has a non-empty history (train needs two train items).
  static bool usable(const UserSplit& u, Stage stage);
};

SplitDataset leave_one_out_split(const Catalog& catalog, std::size_t max_history = 10);

/// Interaction counts per item over the training prefixes.
std::vector<std::int64_t> item_popularity(const Catalog& catalog, const SplitDataset& split);

}  // namespace recalign
