// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"
#include "recalign/random.hpp"
#include "recalign/rewards.hpp"

namespace recalign {

struct PolicyConfig {
  std::size_t n_items = 0;
  std::size_t n_categories = 0;
  int n_distractors = 0;  // extra tokens that name no item
  int dim = 32;           // item embedding width
  int intent_dim = 32;
  int hidden = 128;
  int critic_hidden = 64;
  int cap_extra = 5;  // at most k + cap_extra item tokens per response
  std::uint64_t seed = 1;
  double init_scale = 0.3;

  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

/// What the policy conditions on: the history window, the intention and k.
struct PolicyInput {
  std::vector<ItemId> history;
  Intention intention;
  int k = 1;
};

PolicyInput policy_input(const InstructionSample& sample);

/// A response in token space: item (or distractor) tokens followed by END.
struct Trajectory {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // at the sampling temperature; 0 for a forced END
  bool forced_end = false;       // END appended at the length cap rather than sampled

  std::size_t num_items() const noexcept { return tokens.empty() ? 0 : tokens.size() - 1; }
  /// Every token but the last is item-final; the last is the ending token.
  TokenLayout layout() const;
};

/// Small autoregressive recommender over a closed item vocabulary with a
/// value head. Parameters live in one flat buffer: actor first, then critic.
///
/// The step input concatenates pooled history embeddings, the summed intention
/// embedding, numeric features (k, m, step position), the pooled generated
/// prefix and a category-gated view of that prefix. One tanh layer maps it to
/// next-token logits, plus two learned copy terms on tokens already generated
/// or already in the history. The critic reads the same input with the
/// gradient stopped.
class Policy {
 public:
  Policy() = default;
  static Policy init(const PolicyConfig& config);

  const PolicyConfig& config() const noexcept { return config_; }
  int vocab_size() const noexcept { return static_cast<int>(config_.n_items) + config_.n_distractors + 1; }
  int end_token() const noexcept { return vocab_size() - 1; }
  bool is_item_token(int tok) const noexcept { return tok >= 0 && tok < static_cast<int>(config_.n_items); }
  int input_dim() const noexcept;
  int max_items(int k) const noexcept { return k + config_.cap_extra; }

  std::vector<double>& parameters() noexcept { return params_; }
  const std::vector<double>& parameters() const noexcept { return params_; }
  std::size_t actor_size() const noexcept { return critic_offset_; }

  /// Next-token logits (temperature 1) after `prefix`.
  Eigen::VectorXd next_logits(const PolicyInput& input, std::span<const int> prefix) const;
  double next_value(const PolicyInput& input, std::span<const int> prefix) const;

  /// Teacher-forced pass over whole token sequences. Column s of `logits`
  /// scores tokens[seq][t] given tokens[seq][0..t).
  struct Batch {
    std::vector<const PolicyInput*> inputs;
    std::vector<const std::vector<int>*> tokens;
    std::vector<std::pair<int, int>> steps;  // (sequence, position) per column
    Eigen::MatrixXd x, hidden, logits;
    Eigen::MatrixXd critic_hidden;
    Eigen::VectorXd values;
  };
  Batch forward(std::vector<const PolicyInput*> inputs, std::vector<const std::vector<int>*> tokens,
                bool with_critic) const;
  /// Accumulates gradients of a loss with d(loss)/d(logits) = dlogits and,
  /// optionally, d(loss)/d(values) = dvalues into grad.
  void backward(const Batch& batch, const Eigen::MatrixXd& dlogits, const Eigen::VectorXd* dvalues,
                std::vector<double>& grad) const;

  void save(const std::filesystem::path& path) const;
  static Policy load(const std::filesystem::path& path);

  bool operator==(const Policy& o) const { return config_ == o.config_ && params_ == o.params_; }

 private:
  struct Offsets {
    std::size_t emb, kind, kind_m, kind_cat, gate, w1, b1, wo, bo, beta_prefix, beta_hist;
    std::size_t wc, bc, wv, bv, total;
  };
  void compute_offsets();
  void fill_input(const PolicyInput& input, std::span<const int> prefix, double* x) const;
  void scatter_input_grad(const PolicyInput& input, std::span<const int> prefix, const double* dx,
                          std::vector<double>& grad) const;
  void add_copy_terms(const PolicyInput& input, std::span<const int> prefix, double* logits) const;

  PolicyConfig config_;
  Offsets off_{};
  std::size_t critic_offset_ = 0;
  std::vector<double> params_;
};

/// Log-softmax of logits / temperature.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

Trajectory sample_trajectory(const Policy& policy, const PolicyInput& input, double temperature, Rng& rng);
std::vector<Trajectory> sample_response(const Policy& policy, const PolicyInput& input, double temperature,
                                        int n_samples, Rng& rng);
Trajectory greedy_decode(const Policy& policy, const PolicyInput& input);

/// Per-token log-probabilities of an existing trajectory at `temperature`,
/// computed step by step exactly as during sampling.
std::vector<double> score_trajectory(const Policy& policy, const PolicyInput& input, const Trajectory& traj,
                                     double temperature);

struct TokenKl {
  std::vector<double> logp;
  std::vector<double> ref_logp;
  std::vector<double> kl;
};
TokenKl logprobs_and_kl(const Policy& policy, const Policy& reference, const PolicyInput& input,
                        const Trajectory& traj, double temperature);

std::vector<ListItem> trajectory_items(const Policy& policy, const Trajectory& traj);
ParsedList parse_response(const Policy& policy, const Trajectory& traj, const Catalog& catalog,
                          const std::vector<ItemId>& history, int k);

/// Token ids of a label list followed by END.
std::vector<int> label_tokens(const Policy& policy, const std::vector<ItemId>& labels);

struct SlConfig {
  int epochs = 20;
  double lr = 3e-3;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool keep_best = true;  // end on the epoch with the lowest validation loss
};

struct SlLog {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  double initial_valid_loss = 0.0;
  int best_epoch = -1;  // 0-based; -1 when nothing was selected
};

/// Mean token cross-entropy of the label responses; accumulates the gradient
/// of that mean into grad when given.
double sl_loss(const Policy& policy, std::span<const PolicyInput> inputs, std::span<const std::vector<int>> targets,
               std::vector<double>* grad);
double sl_loss(const Policy& policy, const std::vector<InstructionSample>& samples);

/// Teacher-forced likelihood training on label responses.
SlLog sl_train(Policy& policy, const std::vector<InstructionSample>& train, const std::vector<InstructionSample>& valid,
               const SlConfig& config);

}  // namespace recalign
