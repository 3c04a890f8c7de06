// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "recalign/catalog.hpp"

namespace recalign {

enum class TeacherKind { attentive, markov_popularity };

std::string to_string(TeacherKind kind);
TeacherKind teacher_kind_from_string(const std::string& s);

struct TeacherConfig {
  TeacherKind kind = TeacherKind::attentive;
  int dim = 32;            // embedding width, at most 64
  int max_len = 10;        // attention window
  int epochs = 8;
  double lr = 2e-3;
  int negatives = 100;     // sampled-softmax negatives per example
  int batch_size = 32;
  std::uint64_t seed = 1;

  bool operator==(const TeacherConfig&) const = default;
};

/// A full ranking of the catalog for one history. `ranked` is a permutation of
/// every item id, best first; `rank_of[id]` is the 1-based position of id.
struct TeacherPredictions {
  std::vector<ItemId> history;
  std::vector<ItemId> ranked;
  std::vector<int> rank_of;

  int rank(ItemId id) const { return rank_of.at(static_cast<std::size_t>(id)); }
  /// The first `n` ranked items that are not in the history.
  std::vector<ItemId> top_excluding_history(std::size_t n) const;
};

/// Orders items by descending score, ties broken by ascending item id.
TeacherPredictions rank_by_scores(std::span<const double> scores, std::vector<ItemId> history);

/// Sequential recommender supplying label candidates and the ranks consumed
/// by the preference reward.
///
/// The attentive kind is a single self-attention block over the right-aligned
/// history window with learned position embeddings; the item score is the dot
/// product of the attended representation with the (shared) item embedding plus
/// an item bias. The markov-popularity kind ranks by transition counts out of
/// the last history item, then by global popularity.
class TeacherModel {
 public:
  TeacherModel() = default;

  TeacherKind kind() const noexcept { return config_.kind; }
  const TeacherConfig& config() const noexcept { return config_; }
  std::size_t num_items() const noexcept { return n_items_; }
  const std::vector<double>& parameters() const noexcept { return params_; }

  std::vector<double> scores(std::span<const ItemId> history) const;
  TeacherPredictions predict_full_ranking(std::span<const ItemId> history) const;

  void save(const std::filesystem::path& path) const;
  static TeacherModel load(const std::filesystem::path& path);

  bool operator==(const TeacherModel&) const = default;

  // Attentive-kind internals, exposed for gradient checks.
  struct Example {
    std::vector<ItemId> window;
    ItemId target = 0;
    std::vector<ItemId> negatives;
  };
  /// Sampled-softmax loss of one example; accumulates d(loss)/d(params) into grad.
  double example_loss(const Example& ex, std::vector<double>* grad) const;
  static TeacherModel init_attentive(std::size_t n_items, const TeacherConfig& config);
  std::vector<double>& mutable_parameters() noexcept { return params_; }

 private:
  friend TeacherModel train_teacher(const SplitDataset&, std::size_t, const TeacherConfig&);

  TeacherConfig config_;
  std::size_t n_items_ = 0;
  std::vector<double> params_;                  // attentive
  std::vector<std::int64_t> popularity_;        // markov-popularity
  std::vector<std::vector<std::pair<ItemId, std::int64_t>>> transitions_;  // sorted by target id
};

/// Trains a teacher on the training prefixes of a split. Deterministic per config.seed.
TeacherModel train_teacher(const SplitDataset& split, std::size_t n_items, const TeacherConfig& config);

/// Popularity-only ranking from training prefixes.
TeacherPredictions popularity_ranking(const std::vector<std::int64_t>& popularity,
                                      std::vector<ItemId> history);

/// HR@K on the validation (or test) item, with history items removed from the ranking.
double teacher_hit_rate(const TeacherModel& model, const SplitDataset& split, Stage stage, std::size_t k);
double popularity_hit_rate(const std::vector<std::int64_t>& popularity, const SplitDataset& split,
                           Stage stage, std::size_t k);

}  // namespace recalign
