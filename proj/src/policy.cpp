// SPDX-License-Identifier: Apache-2.0
#include "recalign/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "recalign/adam.hpp"
#include "recalign/errors.hpp"

namespace recalign {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const Eigen::MatrixXd>;
using CVMap = Eigen::Map<const Eigen::VectorXd>;

namespace {

constexpr int kNumKinds = 7;

std::vector<const Intention*> single_parts(const Intention& in) {
  std::vector<const Intention*> parts;
  if (in.kind == IntentionKind::Combo)
    for (const auto& p : in.parts) parts.push_back(&p);
  else
    parts.push_back(&in);
  return parts;
}

std::vector<int> unique_sorted(std::span<const int> v) {
  std::vector<int> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

void PolicyConfig::validate() const {
  if (n_items == 0 || n_categories == 0) throw ArgumentError("policy needs a non-empty catalog");
  if (n_distractors < 0 || dim < 1 || intent_dim < 1 || hidden < 1 || critic_hidden < 1 || cap_extra < 0)
    throw ArgumentError("invalid policy dimensions");
  if (dim > 64) throw ArgumentError("policy embedding width is limited to 64");
}

PolicyInput policy_input(const InstructionSample& sample) { return {sample.history, sample.intention, sample.k}; }

TokenLayout Trajectory::layout() const {
  TokenLayout l;
  if (tokens.empty()) throw InternalError("empty trajectory");
  l.item_final.resize(tokens.size(), -1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) l.item_final[t] = static_cast<int>(t);
  l.sequence_final = tokens.size() - 1;
  return l;
}

int Policy::input_dim() const noexcept { return 5 * config_.dim + config_.intent_dim + 6; }

void Policy::compute_offsets() {
  const std::size_t d = static_cast<std::size_t>(config_.dim), du = static_cast<std::size_t>(config_.intent_dim);
  const std::size_t n_tok = config_.n_items + static_cast<std::size_t>(config_.n_distractors);
  const std::size_t nc = config_.n_categories, h = static_cast<std::size_t>(config_.hidden);
  const std::size_t hc = static_cast<std::size_t>(config_.critic_hidden);
  const std::size_t din = static_cast<std::size_t>(input_dim()), v = static_cast<std::size_t>(vocab_size());
  std::size_t o = 0;
  auto take = [&o](std::size_t n) {
    const std::size_t at = o;
    o += n;
    return at;
  };
  off_.emb = take(d * n_tok);
  off_.kind = take(du * kNumKinds);
  off_.kind_m = take(du * kNumKinds);
  off_.kind_cat = take(du * kNumKinds * nc);
  off_.gate = take(d * nc);
  off_.w1 = take(h * din);
  off_.b1 = take(h);
  off_.wo = take(v * h);
  off_.bo = take(v);
  off_.beta_prefix = take(1);
  off_.beta_hist = take(1);
  critic_offset_ = o;
  off_.wc = take(hc * din);
  off_.bc = take(hc);
  off_.wv = take(hc);
  off_.bv = take(1);
  off_.total = o;
}

Policy Policy::init(const PolicyConfig& config) {
  config.validate();
  Policy p;
  p.config_ = config;
  p.compute_offsets();
  p.params_.assign(p.off_.total, 0.0);
  Rng rng = make_stream({config.seed, 0x706f6c6963ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t from, std::size_t to, double scale) {
    for (std::size_t i = from; i < to; ++i) p.params_[i] = scale * normal(rng);
  };
  const double din = p.input_dim();
  fill(p.off_.emb, p.off_.w1, config.init_scale);
  fill(p.off_.w1, p.off_.b1, 1.0 / std::sqrt(din));
  fill(p.off_.wo, p.off_.bo, 1.0 / std::sqrt(static_cast<double>(config.hidden)));
  fill(p.off_.wc, p.off_.bc, 1.0 / std::sqrt(din));
  fill(p.off_.wv, p.off_.bv, 1.0 / std::sqrt(static_cast<double>(config.critic_hidden)));
  return p;
}

void Policy::fill_input(const PolicyInput& input, std::span<const int> prefix, double* x) const {
  const int d = config_.dim, du = config_.intent_dim;
  const double* E = params_.data() + off_.emb;
  const int n_tok = static_cast<int>(config_.n_items) + config_.n_distractors;
  std::fill(x, x + input_dim(), 0.0);
  double* hmean = x;
  double* hlast = x + d;
  double* u = x + 2 * d;
  double* num = u + du;
  double* psum = num + 3;
  double* plast = psum + d;
  double* gated = plast + d;
  double* step = gated + d;

  const auto& hist = input.history;
  for (ItemId h : hist) {
    if (h < 0 || static_cast<std::size_t>(h) >= config_.n_items) throw ArgumentError("history item outside the vocabulary");
    for (int j = 0; j < d; ++j) hmean[j] += E[static_cast<std::size_t>(h) * d + j];
  }
  if (!hist.empty()) {
    for (int j = 0; j < d; ++j) hmean[j] /= static_cast<double>(hist.size());
    const double* last = E + static_cast<std::size_t>(hist.back()) * d;
    std::copy(last, last + d, hlast);
  }

  double m_feat = 0.0;
  std::vector<double> gate(static_cast<std::size_t>(d), 0.0);
  for (const Intention* part : single_parts(input.intention)) {
    const int kind = static_cast<int>(part->kind);
    const double* kv = params_.data() + off_.kind + static_cast<std::size_t>(kind * du);
    const double* km = params_.data() + off_.kind_m + static_cast<std::size_t>(kind * du);
    for (int j = 0; j < du; ++j) u[j] += kv[j] + part->m * km[j];
    m_feat += part->m;
    if (part->target) {
      const std::size_t c = static_cast<std::size_t>(*part->target);
      if (c >= config_.n_categories) throw ArgumentError("intention category outside the policy's catalog");
      const double* kc = params_.data() + off_.kind_cat + (static_cast<std::size_t>(kind) * config_.n_categories + c) * du;
      for (int j = 0; j < du; ++j) u[j] += kc[j];
      const double* g = params_.data() + off_.gate + c * d;
      for (int j = 0; j < d; ++j) gate[static_cast<std::size_t>(j)] += g[j];
    }
  }
  num[0] = input.k / 10.0;
  num[1] = m_feat;
  num[2] = hist.empty() ? 0.0 : 1.0;

  for (int tok : prefix) {
    if (tok < 0 || tok >= n_tok) throw ArgumentError("prefix token outside the vocabulary");
    for (int j = 0; j < d; ++j) psum[j] += E[static_cast<std::size_t>(tok) * d + j] / 10.0;
  }
  if (!prefix.empty()) {
    const double* last = E + static_cast<std::size_t>(prefix.back()) * d;
    std::copy(last, last + d, plast);
  }
  for (int j = 0; j < d; ++j) gated[j] = gate[static_cast<std::size_t>(j)] * psum[j];
  const double t = static_cast<double>(prefix.size());
  step[0] = t / 10.0;
  step[1] = (input.k - t) / 10.0;
  step[2] = t >= input.k ? 1.0 : 0.0;
}

void Policy::scatter_input_grad(const PolicyInput& input, std::span<const int> prefix, const double* dx,
                                std::vector<double>& grad) const {
  const int d = config_.dim, du = config_.intent_dim;
  const double* dhmean = dx;
  const double* dhlast = dx + d;
  const double* du_ = dx + 2 * d;
  const double* dpsum_direct = du_ + du + 3;
  const double* dplast = dpsum_direct + d;
  const double* dgated = dplast + d;
  double* gE = grad.data() + off_.emb;
  const double* E = params_.data() + off_.emb;

  const auto& hist = input.history;
  if (!hist.empty()) {
    const double inv = 1.0 / static_cast<double>(hist.size());
    for (ItemId h : hist)
      for (int j = 0; j < d; ++j) gE[static_cast<std::size_t>(h) * d + j] += dhmean[j] * inv;
    for (int j = 0; j < d; ++j) gE[static_cast<std::size_t>(hist.back()) * d + j] += dhlast[j];
  }

  std::vector<double> gate(static_cast<std::size_t>(d), 0.0);
  const auto parts = single_parts(input.intention);
  for (const Intention* part : parts) {
    const int kind = static_cast<int>(part->kind);
    double* gk = grad.data() + off_.kind + static_cast<std::size_t>(kind * du);
    double* gm = grad.data() + off_.kind_m + static_cast<std::size_t>(kind * du);
    for (int j = 0; j < du; ++j) {
      gk[j] += du_[j];
      gm[j] += part->m * du_[j];
    }
    if (part->target) {
      const std::size_t c = static_cast<std::size_t>(*part->target);
      double* gc = grad.data() + off_.kind_cat + (static_cast<std::size_t>(kind) * config_.n_categories + c) * du;
      for (int j = 0; j < du; ++j) gc[j] += du_[j];
      const double* g = params_.data() + off_.gate + c * d;
      for (int j = 0; j < d; ++j) gate[static_cast<std::size_t>(j)] += g[j];
    }
  }

  // psum feeds both its own slot and the gated slot.
  std::vector<double> psum(static_cast<std::size_t>(d), 0.0);
  for (int tok : prefix)
    for (int j = 0; j < d; ++j) psum[static_cast<std::size_t>(j)] += E[static_cast<std::size_t>(tok) * d + j] / 10.0;
  for (const Intention* part : parts) {
    if (!part->target) continue;
    double* gg = grad.data() + off_.gate + static_cast<std::size_t>(*part->target) * d;
    for (int j = 0; j < d; ++j) gg[j] += dgated[j] * psum[static_cast<std::size_t>(j)];
  }
  for (int tok : prefix)
    for (int j = 0; j < d; ++j)
      gE[static_cast<std::size_t>(tok) * d + j] += (dpsum_direct[j] + dgated[j] * gate[static_cast<std::size_t>(j)]) / 10.0;
  if (!prefix.empty())
    for (int j = 0; j < d; ++j) gE[static_cast<std::size_t>(prefix.back()) * d + j] += dplast[j];
}

void Policy::add_copy_terms(const PolicyInput& input, std::span<const int> prefix, double* logits) const {
  const double bp = params_[off_.beta_prefix], bh = params_[off_.beta_hist];
  for (int tok : unique_sorted(prefix)) logits[tok] += bp;
  for (int h : unique_sorted(input.history)) logits[h] += bh;
}

VectorXd Policy::next_logits(const PolicyInput& input, std::span<const int> prefix) const {
  const int din = input_dim(), h = config_.hidden, v = vocab_size();
  VectorXd x(din);
  fill_input(input, prefix, x.data());
  const CMap W1(params_.data() + off_.w1, h, din);
  const CVMap b1(params_.data() + off_.b1, h);
  const CMap Wo(params_.data() + off_.wo, v, h);
  const CVMap bo(params_.data() + off_.bo, v);
  const VectorXd hid = (W1 * x + b1).array().tanh().matrix();
  VectorXd z = Wo * hid + bo;
  add_copy_terms(input, prefix, z.data());
  return z;
}

double Policy::next_value(const PolicyInput& input, std::span<const int> prefix) const {
  const int din = input_dim(), hc = config_.critic_hidden;
  VectorXd x(din);
  fill_input(input, prefix, x.data());
  const CMap Wc(params_.data() + off_.wc, hc, din);
  const CVMap bc(params_.data() + off_.bc, hc);
  const CVMap wv(params_.data() + off_.wv, hc);
  return wv.dot((Wc * x + bc).array().tanh().matrix()) + params_[off_.bv];
}

Policy::Batch Policy::forward(std::vector<const PolicyInput*> inputs, std::vector<const std::vector<int>*> tokens,
                              bool with_critic) const {
  if (inputs.size() != tokens.size()) throw InternalError("forward: inputs/tokens mismatch");
  Batch b;
  b.inputs = std::move(inputs);
  b.tokens = std::move(tokens);
  for (std::size_t i = 0; i < b.tokens.size(); ++i)
    for (std::size_t t = 0; t < b.tokens[i]->size(); ++t) b.steps.emplace_back(static_cast<int>(i), static_cast<int>(t));
  const int din = input_dim(), h = config_.hidden, v = vocab_size();
  const auto S = static_cast<Eigen::Index>(b.steps.size());
  b.x.resize(din, S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = b.steps[static_cast<std::size_t>(s)];
    const auto& toks = *b.tokens[static_cast<std::size_t>(i)];
    fill_input(*b.inputs[static_cast<std::size_t>(i)], std::span<const int>(toks.data(), static_cast<std::size_t>(t)),
               b.x.col(s).data());
  }
  const CMap W1(params_.data() + off_.w1, h, din);
  const CVMap b1(params_.data() + off_.b1, h);
  const CMap Wo(params_.data() + off_.wo, v, h);
  const CVMap bo(params_.data() + off_.bo, v);
  b.hidden.noalias() = W1 * b.x;
  b.hidden = (b.hidden.colwise() + b1).array().tanh().matrix();
  b.logits.noalias() = Wo * b.hidden;
  b.logits.colwise() += bo;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = b.steps[static_cast<std::size_t>(s)];
    const auto& toks = *b.tokens[static_cast<std::size_t>(i)];
    add_copy_terms(*b.inputs[static_cast<std::size_t>(i)],
                   std::span<const int>(toks.data(), static_cast<std::size_t>(t)), b.logits.col(s).data());
  }
  if (with_critic) {
    const int hc = config_.critic_hidden;
    const CMap Wc(params_.data() + off_.wc, hc, din);
    const CVMap bc(params_.data() + off_.bc, hc);
    const CVMap wv(params_.data() + off_.wv, hc);
    b.critic_hidden.noalias() = Wc * b.x;
    b.critic_hidden = (b.critic_hidden.colwise() + bc).array().tanh().matrix();
    b.values = (b.critic_hidden.transpose() * wv).array() + params_[off_.bv];
  }
  return b;
}

void Policy::backward(const Batch& b, const MatrixXd& dlogits, const VectorXd* dvalues,
                      std::vector<double>& grad) const {
  if (grad.size() != params_.size()) throw InternalError("backward: gradient buffer size mismatch");
  const int din = input_dim(), h = config_.hidden, v = vocab_size();
  const auto S = static_cast<Eigen::Index>(b.steps.size());
  if (dlogits.rows() != v || dlogits.cols() != S) throw InternalError("backward: dlogits shape mismatch");
  const CMap W1(params_.data() + off_.w1, h, din);
  const CMap Wo(params_.data() + off_.wo, v, h);
  Map<MatrixXd> gW1(grad.data() + off_.w1, h, din);
  Map<VectorXd> gb1(grad.data() + off_.b1, h);
  Map<MatrixXd> gWo(grad.data() + off_.wo, v, h);
  Map<VectorXd> gbo(grad.data() + off_.bo, v);

  gWo.noalias() += dlogits * b.hidden.transpose();
  gbo += dlogits.rowwise().sum();
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = b.steps[static_cast<std::size_t>(s)];
    const auto& toks = *b.tokens[static_cast<std::size_t>(i)];
    for (int tok : unique_sorted(std::span<const int>(toks.data(), static_cast<std::size_t>(t))))
      grad[off_.beta_prefix] += dlogits(tok, s);
    for (int hi : unique_sorted(b.inputs[static_cast<std::size_t>(i)]->history)) grad[off_.beta_hist] += dlogits(hi, s);
  }
  MatrixXd da = Wo.transpose() * dlogits;
  da.array() *= 1.0 - b.hidden.array().square();
  gW1.noalias() += da * b.x.transpose();
  gb1 += da.rowwise().sum();
  const MatrixXd dx = W1.transpose() * da;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = b.steps[static_cast<std::size_t>(s)];
    const auto& toks = *b.tokens[static_cast<std::size_t>(i)];
    scatter_input_grad(*b.inputs[static_cast<std::size_t>(i)],
                       std::span<const int>(toks.data(), static_cast<std::size_t>(t)), dx.col(s).data(), grad);
  }

  if (dvalues) {
    if (dvalues->size() != S || b.critic_hidden.cols() != S) throw InternalError("backward: critic was not evaluated");
    const int hc = config_.critic_hidden;
    const CVMap wv(params_.data() + off_.wv, hc);
    Map<MatrixXd> gWc(grad.data() + off_.wc, hc, din);
    Map<VectorXd> gbc(grad.data() + off_.bc, hc);
    Map<VectorXd> gwv(grad.data() + off_.wv, hc);
    gwv.noalias() += b.critic_hidden * *dvalues;
    grad[off_.bv] += dvalues->sum();
    MatrixXd dc = wv * dvalues->transpose();
    dc.array() *= 1.0 - b.critic_hidden.array().square();
    gWc.noalias() += dc * b.x.transpose();
    gbc += dc.rowwise().sum();
  }
}

void Policy::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "recalign-policy";
  j["version"] = 1;
  j["config"] = {{"n_items", config_.n_items},
                 {"n_categories", config_.n_categories},
                 {"n_distractors", config_.n_distractors},
                 {"dim", config_.dim},
                 {"intent_dim", config_.intent_dim},
                 {"hidden", config_.hidden},
                 {"critic_hidden", config_.critic_hidden},
                 {"cap_extra", config_.cap_extra},
                 {"seed", config_.seed},
                 {"init_scale", config_.init_scale}};
  j["parameters"] = params_;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write policy checkpoint " + path.string());
  out << j.dump();
}

Policy Policy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt policy checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "recalign-policy" || j.value("version", 0) != 1)
    throw std::runtime_error(path.string() + " is not a version 1 policy checkpoint");
  const auto& c = j.at("config");
  PolicyConfig cfg;
  cfg.n_items = c.at("n_items").get<std::size_t>();
  cfg.n_categories = c.at("n_categories").get<std::size_t>();
  cfg.n_distractors = c.at("n_distractors").get<int>();
  cfg.dim = c.at("dim").get<int>();
  cfg.intent_dim = c.at("intent_dim").get<int>();
  cfg.hidden = c.at("hidden").get<int>();
  cfg.critic_hidden = c.at("critic_hidden").get<int>();
  cfg.cap_extra = c.at("cap_extra").get<int>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  cfg.init_scale = c.at("init_scale").get<double>();
  cfg.validate();
  Policy p;
  p.config_ = cfg;
  p.compute_offsets();
  p.params_ = j.at("parameters").get<std::vector<double>>();
  if (p.params_.size() != p.off_.total) throw std::runtime_error("policy checkpoint has the wrong parameter count");
  return p;
}

// ---------------------------------------------------------------------------

VectorXd log_softmax(const VectorXd& logits, double temperature) {
  const VectorXd z = logits / temperature;
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

Trajectory sample_trajectory(const Policy& policy, const PolicyInput& input, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ArgumentError("sampling temperature must be positive");
  Trajectory tr;
  const int end = policy.end_token();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (true) {
    if (static_cast<int>(tr.tokens.size()) >= policy.max_items(input.k)) {
      tr.tokens.push_back(end);
      tr.logprobs.push_back(0.0);
      tr.forced_end = true;
      break;
    }
    const VectorXd lp = log_softmax(policy.next_logits(input, tr.tokens), temperature);
    const double u = unif(rng);
    double acc = 0.0;
    int tok = end;
    for (Eigen::Index v = 0; v < lp.size(); ++v) {
      acc += std::exp(lp[v]);
      if (u < acc) {
        tok = static_cast<int>(v);
        break;
      }
    }
    tr.tokens.push_back(tok);
    tr.logprobs.push_back(lp[tok]);
    if (tok == end) break;
  }
  return tr;
}

std::vector<Trajectory> sample_response(const Policy& policy, const PolicyInput& input, double temperature,
                                        int n_samples, Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(std::max(n_samples, 0)));
  for (int i = 0; i < n_samples; ++i) out.push_back(sample_trajectory(policy, input, temperature, rng));
  return out;
}

Trajectory greedy_decode(const Policy& policy, const PolicyInput& input) {
  Trajectory tr;
  const int end = policy.end_token();
  while (true) {
    if (static_cast<int>(tr.tokens.size()) >= policy.max_items(input.k)) {
      tr.tokens.push_back(end);
      tr.logprobs.push_back(0.0);
      tr.forced_end = true;
      break;
    }
    const VectorXd z = policy.next_logits(input, tr.tokens);
    Eigen::Index best = 0;
    z.maxCoeff(&best);
    tr.tokens.push_back(static_cast<int>(best));
    tr.logprobs.push_back(log_softmax(z)[best]);
    if (best == end) break;
  }
  return tr;
}

std::vector<double> score_trajectory(const Policy& policy, const PolicyInput& input, const Trajectory& traj,
                                     double temperature) {
  std::vector<double> lp(traj.tokens.size(), 0.0);
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    if (traj.forced_end && t + 1 == traj.tokens.size()) break;
    const auto prefix = std::span<const int>(traj.tokens.data(), t);
    lp[t] = log_softmax(policy.next_logits(input, prefix), temperature)[traj.tokens[t]];
  }
  return lp;
}

TokenKl logprobs_and_kl(const Policy& policy, const Policy& reference, const PolicyInput& input,
                        const Trajectory& traj, double temperature) {
  if (policy.vocab_size() != reference.vocab_size()) throw ArgumentError("policy and reference vocabularies differ");
  TokenKl out;
  out.logp = score_trajectory(policy, input, traj, temperature);
  out.ref_logp = score_trajectory(reference, input, traj, temperature);
  out.kl.resize(out.logp.size());
  for (std::size_t t = 0; t < out.kl.size(); ++t) out.kl[t] = out.logp[t] - out.ref_logp[t];
  return out;
}

std::vector<ListItem> trajectory_items(const Policy& policy, const Trajectory& traj) {
  std::vector<ListItem> items;
  for (std::size_t t = 0; t < traj.num_items(); ++t) {
    const int tok = traj.tokens[t];
    if (policy.is_item_token(tok))
      items.push_back({tok, std::to_string(tok)});
    else
      items.push_back({std::nullopt, "<unknown " + std::to_string(tok) + ">"});
  }
  return items;
}

ParsedList parse_response(const Policy& policy, const Trajectory& traj, const Catalog& catalog,
                          const std::vector<ItemId>& history, int k) {
  return judge_legality(trajectory_items(policy, traj), k, history, catalog);
}

std::vector<int> label_tokens(const Policy& policy, const std::vector<ItemId>& labels) {
  std::vector<int> toks;
  toks.reserve(labels.size() + 1);
  for (ItemId id : labels) {
    if (!policy.is_item_token(id)) throw ArgumentError("label item outside the policy vocabulary");
    toks.push_back(id);
  }
  toks.push_back(policy.end_token());
  return toks;
}

// ---------------------------------------------------------------------------

double sl_loss(const Policy& policy, std::span<const PolicyInput> inputs, std::span<const std::vector<int>> targets,
               std::vector<double>* grad) {
  if (inputs.size() != targets.size()) throw InternalError("sl_loss: inputs/targets mismatch");
  std::vector<const PolicyInput*> in;
  std::vector<const std::vector<int>*> tok;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    in.push_back(&inputs[i]);
    tok.push_back(&targets[i]);
  }
  const auto batch = policy.forward(std::move(in), std::move(tok), false);
  const auto S = batch.logits.cols();
  if (S == 0) return 0.0;
  MatrixXd dz(batch.logits.rows(), S);
  double loss = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto [i, t] = batch.steps[static_cast<std::size_t>(s)];
    const int a = (*batch.tokens[static_cast<std::size_t>(i)])[static_cast<std::size_t>(t)];
    const VectorXd lp = log_softmax(batch.logits.col(s));
    loss -= lp[a];
    if (grad) {
      dz.col(s) = lp.array().exp();
      dz(a, s) -= 1.0;
    }
  }
  const double inv = 1.0 / static_cast<double>(S);
  if (grad) {
    dz *= inv;
    policy.backward(batch, dz, nullptr, *grad);
  }
  return loss * inv;
}

double sl_loss(const Policy& policy, const std::vector<InstructionSample>& samples) {
  std::vector<PolicyInput> inputs;
  std::vector<std::vector<int>> targets;
  for (const auto& s : samples) {
    inputs.push_back(policy_input(s));
    targets.push_back(label_tokens(policy, s.labels));
  }
  // Chunked so the logits matrix stays small.
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < inputs.size(); i += 256) {
    const std::size_t n = std::min<std::size_t>(256, inputs.size() - i);
    std::size_t s = 0;
    for (std::size_t j = i; j < i + n; ++j) s += targets[j].size();
    total += sl_loss(policy, std::span(inputs).subspan(i, n), std::span(targets).subspan(i, n), nullptr) *
             static_cast<double>(s);
    steps += s;
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

SlLog sl_train(Policy& policy, const std::vector<InstructionSample>& train, const std::vector<InstructionSample>& valid,
               const SlConfig& config) {
  if (train.empty()) throw ArgumentError("sl_train: empty dataset");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0.0)) throw ArgumentError("sl_train: invalid config");
  std::vector<PolicyInput> inputs;
  std::vector<std::vector<int>> targets;
  for (const auto& s : train) {
    inputs.push_back(policy_input(s));
    targets.push_back(label_tokens(policy, s.labels));
  }
  SlLog log;
  if (!valid.empty()) log.initial_valid_loss = sl_loss(policy, valid);
  Rng rng = make_stream({config.seed, 0x736cULL});
  const std::size_t actor = policy.actor_size();
  Adam adam(actor, config.lr);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(policy.parameters().size());
  std::vector<double> best;
  double best_loss = std::numeric_limits<double>::infinity();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += bs) {
      std::vector<PolicyInput> bin;
      std::vector<std::vector<int>> btg;
      for (std::size_t j = i; j < std::min(order.size(), i + bs); ++j) {
        bin.push_back(inputs[order[j]]);
        btg.push_back(targets[order[j]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += sl_loss(policy, bin, btg, &grad);
      ++batches;
      adam.step(std::span(policy.parameters()).first(actor), std::span<const double>(grad).first(actor));
    }
    log.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    if (valid.empty()) continue;
    log.valid_loss.push_back(sl_loss(policy, valid));
    if (config.keep_best && log.valid_loss.back() < best_loss) {
      best_loss = log.valid_loss.back();
      best = policy.parameters();
      log.best_epoch = epoch;
    }
  }
  if (!best.empty()) policy.parameters() = std::move(best);
  return log;
}

}  // namespace recalign
