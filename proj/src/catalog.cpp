// SPDX-License-Identifier: Apache-2.0
#include "recalign/catalog.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "recalign/errors.hpp"
#include "recalign/random.hpp"

namespace recalign {

using nlohmann::json;

Catalog::Catalog(std::vector<Item> items, std::vector<std::string> category_names,
                 std::vector<UserSequence> users)
    : items_(std::move(items)), category_names_(std::move(category_names)), users_(std::move(users)) {
  const std::size_t nc = category_names_.size();
  membership_.assign(items_.size() * nc, 0);
  by_category_.assign(nc, {});
  for (std::size_t i = 0; i < items_.size(); ++i) {
    Item& it = items_[i];
    if (it.id != static_cast<ItemId>(i)) throw ArgumentError("item ids must equal their index");
    if (it.title.empty()) throw ArgumentError("item " + std::to_string(i) + " has an empty title");
    if (it.categories.empty()) throw ArgumentError("item " + std::to_string(i) + " has no categories");
    std::sort(it.categories.begin(), it.categories.end());
    it.categories.erase(std::unique(it.categories.begin(), it.categories.end()), it.categories.end());
    for (CategoryId c : it.categories) {
      if (c < 0 || static_cast<std::size_t>(c) >= nc)
        throw ArgumentError("item " + std::to_string(i) + " references unknown category " + std::to_string(c));
      membership_[i * nc + static_cast<std::size_t>(c)] = 1;
      by_category_[static_cast<std::size_t>(c)].push_back(it.id);
    }
    if (!title_index_.emplace(it.title, it.id).second)
      throw ArgumentError("duplicate item title '" + it.title + "'");
  }
  for (const auto& u : users_)
    for (ItemId id : u.items)
      if (!has_item(id)) throw ArgumentError("user '" + u.external_id + "' references unknown item");
}

const Item& Catalog::item(ItemId id) const {
  if (!has_item(id)) throw LookupError("unknown item id " + std::to_string(id));
  return items_[static_cast<std::size_t>(id)];
}

const std::vector<CategoryId>& Catalog::categories_of(ItemId id) const { return item(id).categories; }

const std::vector<ItemId>& Catalog::items_in(CategoryId c) const {
  if (c < 0 || static_cast<std::size_t>(c) >= by_category_.size())
    throw LookupError("unknown category id " + std::to_string(c));
  return by_category_[static_cast<std::size_t>(c)];
}

std::optional<ItemId> Catalog::find_title(std::string_view title) const {
  auto it = title_index_.find(std::string(title));
  if (it == title_index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Catalog::category_name(CategoryId c) const {
  if (c < 0 || static_cast<std::size_t>(c) >= category_names_.size())
    throw LookupError("unknown category id " + std::to_string(c));
  return category_names_[static_cast<std::size_t>(c)];
}

std::optional<CategoryId> Catalog::find_category(std::string_view name) const {
  for (std::size_t c = 0; c < category_names_.size(); ++c)
    if (category_names_[c] == name) return static_cast<CategoryId>(c);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

struct RawInteraction {
  std::string user;
  std::string item;
  double timestamp = 0.0;
  std::size_t order = 0;
};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string json_id(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw std::runtime_error("id must be a string or an integer");
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isspace(ch) != 0; });
}

}  // namespace

Catalog load_interactions(const std::filesystem::path& interactions,
                          const std::filesystem::path& item_metadata, InteractionFormat format) {
  std::ifstream meta(item_metadata);
  if (!meta) throw std::runtime_error("cannot open item metadata file " + item_metadata.string());

  std::vector<Item> items;
  std::vector<std::string> category_names;
  std::unordered_map<std::string, CategoryId> category_ids;
  std::unordered_map<std::string, ItemId> item_ids;

  std::string line;
  std::size_t lineno = 0;
  const std::string meta_name = item_metadata.filename().string();
  while (std::getline(meta, line)) {
    ++lineno;
    if (blank(line)) continue;
    Item item;
    try {
      const json rec = json::parse(line);
      item.external_id = json_id(rec.at("id"));
      item.title = rec.at("title").get<std::string>();
      for (const auto& c : rec.at("categories")) {
        const auto name = c.get<std::string>();
        auto [it, inserted] = category_ids.emplace(name, static_cast<CategoryId>(category_names.size()));
        if (inserted) category_names.push_back(name);
        item.categories.push_back(it->second);
      }
    } catch (const std::exception& e) {
      throw ParseError(meta_name, lineno, e.what());
    }
    if (item.title.empty()) throw ParseError(meta_name, lineno, "empty title");
    if (item.categories.empty()) throw ParseError(meta_name, lineno, "item without categories");
    item.id = static_cast<ItemId>(items.size());
    if (!item_ids.emplace(item.external_id, item.id).second)
      throw ParseError(meta_name, lineno, "duplicate item id '" + item.external_id + "'");
    items.push_back(std::move(item));
  }
  if (items.empty()) throw std::runtime_error("item metadata file " + item_metadata.string() + " is empty");

  std::ifstream in(interactions);
  if (!in) throw std::runtime_error("cannot open interactions file " + interactions.string());
  const std::string inter_name = interactions.filename().string();

  std::vector<RawInteraction> raw;
  lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    RawInteraction r;
    r.order = raw.size();
    if (format == InteractionFormat::tabular) {
      const auto fields = split_tabs(line);
      if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
        throw ParseError(inter_name, lineno, "expected 'user<TAB>item<TAB>timestamp'");
      r.user = fields[0];
      r.item = fields[1];
      if (fields.size() == 3) {
        const auto& ts = fields[2];
        auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), r.timestamp);
        if (ec != std::errc{} || ptr != ts.data() + ts.size())
          throw ParseError(inter_name, lineno, "bad timestamp '" + ts + "'");
      } else {
        r.timestamp = static_cast<double>(r.order);
      }
    } else {
      try {
        const json rec = json::parse(line);
        r.user = json_id(rec.at("user"));
        r.item = json_id(rec.at("item"));
        r.timestamp = rec.contains("timestamp") ? rec.at("timestamp").get<double>()
                                                : static_cast<double>(r.order);
      } catch (const std::exception& e) {
        throw ParseError(inter_name, lineno, e.what());
      }
    }
    if (!item_ids.count(r.item)) throw MissingItemError(r.item);
    raw.push_back(std::move(r));
  }

  std::vector<UserSequence> users;
  std::unordered_map<std::string, std::size_t> user_index;
  std::vector<std::vector<const RawInteraction*>> per_user;
  for (const auto& r : raw) {
    auto [it, inserted] = user_index.emplace(r.user, users.size());
    if (inserted) {
      users.push_back(UserSequence{r.user, {}});
      per_user.emplace_back();
    }
    per_user[it->second].push_back(&r);
  }
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto& recs = per_user[u];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RawInteraction* a, const RawInteraction* b) { return a->timestamp < b->timestamp; });
    for (const auto* r : recs) users[u].items.push_back(item_ids.at(r->item));
  }
  return Catalog(std::move(items), std::move(category_names), std::move(users));
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& interactions,
                  const std::filesystem::path& item_metadata) {
  std::ofstream meta(item_metadata);
  if (!meta) throw std::runtime_error("cannot write " + item_metadata.string());
  for (const auto& it : catalog.items()) {
    json cats = json::array();
    for (CategoryId c : it.categories) cats.push_back(catalog.category_name(c));
    meta << json{{"id", it.external_id}, {"title", it.title}, {"categories", cats}}.dump() << '\n';
  }
  std::ofstream out(interactions);
  if (!out) throw std::runtime_error("cannot write " + interactions.string());
  for (const auto& u : catalog.users())
    for (std::size_t t = 0; t < u.items.size(); ++t)
      out << u.external_id << '\t' << catalog.item(u.items[t]).external_id << '\t' << t << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr std::array<const char*, 16> kGenres = {
    "Action",   "Adventure", "RPG",    "Strategy", "Simulation", "Puzzle",  "Racing",  "Sports",
    "Horror",   "Casual",    "Indie",  "Shooter",  "Platformer", "Fighting", "Music",  "Survival"};
constexpr std::array<const char*, 12> kAdjectives = {"Crimson", "Silent", "Broken", "Golden", "Hidden", "Iron",
                                                     "Lost",    "Neon",   "Frozen", "Savage", "Wild",   "Distant"};
constexpr std::array<const char*, 12> kNouns = {"Harbor",  "Kingdom", "Signal", "Orbit", "Forest", "Empire",
                                                "Circuit", "Legend",  "Frontier", "Tower", "Echo",  "Voyage"};

std::vector<double> dirichlet(Rng& rng, std::size_t n, double concentration) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = gamma(rng) + 1e-12;
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

Catalog synth_catalog(const SynthConfig& cfg) {
  if (cfg.n_items == 0 || cfg.n_categories == 0 || cfg.n_users == 0)
    throw ArgumentError("synth_catalog: counts must be positive");
  if (cfg.n_categories < 2 || cfg.n_items < cfg.n_categories)
    throw ArgumentError("synth_catalog: need n_items >= n_categories >= 2");
  if (cfg.min_length < 3 || cfg.max_length < cfg.min_length)
    throw ArgumentError("synth_catalog: bad sequence length range");

  Rng rng = make_stream({cfg.seed, 0x5eedca7a1ULL});
  const std::size_t nc = cfg.n_categories;

  std::vector<std::string> names(nc);
  for (std::size_t c = 0; c < nc; ++c)
    names[c] = c < kGenres.size() ? kGenres[c] : "Category " + std::to_string(c);

  std::vector<Item> items(cfg.n_items);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_cat(0, nc - 1);
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    Item& it = items[i];
    it.id = static_cast<ItemId>(i);
    it.external_id = "i" + std::to_string(i);
    it.title = std::string(kAdjectives[(i / kNouns.size()) % kAdjectives.size()]) + " " +
               kNouns[i % kNouns.size()] + " " + std::to_string(i);
    it.categories.push_back(static_cast<CategoryId>(i % nc));
    const double r = unit(rng);
    const std::size_t extra = r < 0.15 ? 2 : (r < 0.5 ? 1 : 0);
    for (std::size_t e = 0; e < extra; ++e) it.categories.push_back(static_cast<CategoryId>(any_cat(rng)));
    std::sort(it.categories.begin(), it.categories.end());
    it.categories.erase(std::unique(it.categories.begin(), it.categories.end()), it.categories.end());
  }

  // Zipf-like popularity over a random permutation.
  std::vector<std::size_t> perm(cfg.n_items);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pop(cfg.n_items);
  for (std::size_t r = 0; r < cfg.n_items; ++r) pop[perm[r]] = 1.0 / std::pow(static_cast<double>(r) + 1.0, 0.8);

  std::vector<std::vector<ItemId>> primary(nc);
  for (const auto& it : items) primary[static_cast<std::size_t>(it.id) % nc].push_back(it.id);
  std::vector<std::discrete_distribution<std::size_t>> pick_in(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<double> w;
    for (ItemId id : primary[c]) w.push_back(pop[static_cast<std::size_t>(id)]);
    pick_in[c] = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }

  // Transition kernel: mostly within the item's primary category.
  std::vector<std::vector<ItemId>> succ(cfg.n_items);
  std::uniform_int_distribution<std::size_t> any_item(0, cfg.n_items - 1);
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    const std::size_t c = i % nc;
    while (succ[i].size() < cfg.successors) {
      ItemId cand;
      if (unit(rng) < 0.75) {
        cand = primary[c][pick_in[c](rng)];
      } else {
        cand = static_cast<ItemId>(any_item(rng));
      }
      if (cand == static_cast<ItemId>(i) ||
          std::find(succ[i].begin(), succ[i].end(), cand) != succ[i].end())
        continue;
      succ[i].push_back(cand);
    }
  }
  std::vector<double> succ_w(cfg.successors);
  for (std::size_t s = 0; s < cfg.successors; ++s) succ_w[s] = 1.0 / static_cast<double>(s + 1);
  std::discrete_distribution<std::size_t> pick_succ(succ_w.begin(), succ_w.end());

  std::uniform_int_distribution<std::size_t> length(cfg.min_length, cfg.max_length);
  std::vector<UserSequence> users(cfg.n_users);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    users[u].external_id = "u" + std::to_string(u);
    const auto mix = dirichlet(rng, nc, cfg.category_concentration);
    std::discrete_distribution<std::size_t> pick_cat(mix.begin(), mix.end());
    const std::size_t n = std::min(length(rng), cfg.n_items);
    auto& seq = users[u].items;
    std::vector<std::uint8_t> used(cfg.n_items, 0);
    while (seq.size() < n) {
      ItemId next = -1;
      for (int attempt = 0; attempt < 20 && next < 0; ++attempt) {
        ItemId cand;
        if (!seq.empty() && unit(rng) < cfg.follow_transition) {
          cand = succ[static_cast<std::size_t>(seq.back())][pick_succ(rng)];
        } else {
          const std::size_t c = pick_cat(rng);
          cand = primary[c][pick_in[c](rng)];
        }
        if (!used[static_cast<std::size_t>(cand)]) next = cand;
      }
      if (next < 0) {
        next = static_cast<ItemId>(any_item(rng));
        while (used[static_cast<std::size_t>(next)]) next = static_cast<ItemId>((next + 1) % static_cast<ItemId>(cfg.n_items));
      }
      used[static_cast<std::size_t>(next)] = 1;
      seq.push_back(next);
    }
  }
  return Catalog(std::move(items), std::move(names), std::move(users));
}

Catalog synth_catalog(std::size_t n_items, std::size_t n_categories, std::size_t n_users, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_items = n_items;
  cfg.n_categories = n_categories;
  cfg.n_users = n_users;
  cfg.seed = seed;
  return synth_catalog(cfg);
}

// ---------------------------------------------------------------------------
// Splitting

SplitDataset leave_one_out_split(const Catalog& catalog, std::size_t max_history) {
  if (max_history == 0) throw ArgumentError("max_history must be positive");
  SplitDataset split;
  split.max_history = max_history;
  for (std::size_t u = 0; u < catalog.num_users(); ++u) {
    const auto& seq = catalog.users()[u].items;
    if (seq.size() < 3) {
      ++split.skipped;
      continue;
    }
    UserSplit us;
    us.user = static_cast<UserIndex>(u);
    us.train.assign(seq.begin(), seq.end() - 2);
    us.valid = seq[seq.size() - 2];
    us.test = seq.back();
    split.users.push_back(std::move(us));
  }
  return split;
}

std::vector<ItemId> SplitDataset::history(const UserSplit& u, Stage stage) const {
  std::vector<ItemId> full;
  switch (stage) {
    case Stage::train:
      full.assign(u.train.begin(), u.train.end() - (u.train.empty() ? 0 : 1));
      break;
    case Stage::valid:
      full = u.train;
      break;
    case Stage::test:
      full = u.train;
      full.push_back(u.valid);
      break;
  }
  if (full.size() > max_history) full.erase(full.begin(), full.end() - static_cast<std::ptrdiff_t>(max_history));
  return full;
}

ItemId SplitDataset::target(const UserSplit& u, Stage stage) {
  switch (stage) {
    case Stage::train:
      if (u.train.empty()) throw ArgumentError("user has no training items");
      return u.train.back();
    case Stage::valid:
      return u.valid;
    case Stage::test:
      return u.test;
  }
  return u.test;
}

bool SplitDataset::usable(const UserSplit& u, Stage stage) {
  return stage != Stage::train || u.train.size() >= 2;
}

std::vector<std::int64_t> item_popularity(const Catalog& catalog, const SplitDataset& split) {
  std::vector<std::int64_t> pop(catalog.num_items(), 0);
  for (const auto& u : split.users)
    for (ItemId id : u.train) ++pop[static_cast<std::size_t>(id)];
  return pop;
}

}  // namespace recalign
