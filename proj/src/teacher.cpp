// SPDX-License-Identifier: Apache-2.0
#include "recalign/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>
#include <json.hpp>

#include "recalign/adam.hpp"
#include "recalign/errors.hpp"
#include "recalign/random.hpp"

namespace recalign {

using nlohmann::json;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

std::string to_string(TeacherKind kind) {
  return kind == TeacherKind::attentive ? "attentive" : "markov-popularity";
}

TeacherKind teacher_kind_from_string(const std::string& s) {
  if (s == "attentive") return TeacherKind::attentive;
  if (s == "markov-popularity" || s == "markov_popularity") return TeacherKind::markov_popularity;
  throw ArgumentError("unknown teacher kind '" + s + "'");
}

std::vector<ItemId> TeacherPredictions::top_excluding_history(std::size_t n) const {
  std::unordered_set<ItemId> hist(history.begin(), history.end());
  std::vector<ItemId> out;
  for (ItemId id : ranked) {
    if (out.size() >= n) break;
    if (!hist.count(id)) out.push_back(id);
  }
  return out;
}

TeacherPredictions rank_by_scores(std::span<const double> scores, std::vector<ItemId> history) {
  TeacherPredictions p;
  p.history = std::move(history);
  p.ranked.resize(scores.size());
  std::iota(p.ranked.begin(), p.ranked.end(), 0);
  std::stable_sort(p.ranked.begin(), p.ranked.end(), [&](ItemId a, ItemId b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  p.rank_of.assign(scores.size(), 0);
  for (std::size_t r = 0; r < p.ranked.size(); ++r) p.rank_of[static_cast<std::size_t>(p.ranked[r])] = static_cast<int>(r + 1);
  return p;
}

// ---------------------------------------------------------------------------
// Attentive parameter layout: E[n,d] P[L,d] Wq[d,d] Wk[d,d] Wv[d,d] bias[n]

namespace {

struct Layout {
  std::size_t n, d, L;
  std::size_t E, P, Wq, Wk, Wv, bias, total;
  Layout(std::size_t n_, std::size_t d_, std::size_t L_) : n(n_), d(d_), L(L_) {
    E = 0;
    P = E + n * d;
    Wq = P + L * d;
    Wk = Wq + d * d;
    Wv = Wk + d * d;
    bias = Wv + d * d;
    total = bias + n;
  }
};

struct Forward {
  std::vector<std::size_t> pos;  // position row per window element
  Mat X;                         // [w, d] inputs
  Vec q;
  Mat K, V;                      // [w, d]
  Vec a;                         // attention weights
  Vec o;                         // output representation
};

Forward attend(const Layout& lay, const std::vector<double>& params, std::span<const ItemId> window) {
  const std::size_t d = lay.d, w = window.size();
  CMatMap E(params.data() + lay.E, static_cast<Eigen::Index>(lay.n), static_cast<Eigen::Index>(d));
  CMatMap P(params.data() + lay.P, static_cast<Eigen::Index>(lay.L), static_cast<Eigen::Index>(d));
  CMatMap Wq(params.data() + lay.Wq, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  CMatMap Wk(params.data() + lay.Wk, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  CMatMap Wv(params.data() + lay.Wv, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Forward f;
  f.X.resize(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(d));
  f.pos.resize(w);
  for (std::size_t i = 0; i < w; ++i) {
    f.pos[i] = lay.L - w + i;
    f.X.row(static_cast<Eigen::Index>(i)) = E.row(window[i]) + P.row(static_cast<Eigen::Index>(f.pos[i]));
  }
  const Vec last = f.X.row(static_cast<Eigen::Index>(w - 1)).transpose();
  f.q = Wq * last;
  f.K = f.X * Wk.transpose();
  f.V = f.X * Wv.transpose();
  Vec s = f.K * f.q / std::sqrt(static_cast<double>(d));
  s.array() -= s.maxCoeff();
  f.a = s.array().exp();
  f.a /= f.a.sum();
  f.o = last + f.V.transpose() * f.a;
  return f;
}

}  // namespace

TeacherModel TeacherModel::init_attentive(std::size_t n_items, const TeacherConfig& config) {
  if (config.dim <= 0 || config.dim > 64) throw ArgumentError("teacher dim must be in [1, 64]");
  if (config.max_len <= 0) throw ArgumentError("teacher max_len must be positive");
  TeacherModel m;
  m.config_ = config;
  m.config_.kind = TeacherKind::attentive;
  m.n_items_ = n_items;
  const Layout lay(n_items, static_cast<std::size_t>(config.dim), static_cast<std::size_t>(config.max_len));
  m.params_.assign(lay.total, 0.0);
  Rng rng = make_stream({config.seed, 0x7eac4e7ULL});
  std::normal_distribution<double> emb(0.0, 0.1);
  const double wscale = 1.0 / std::sqrt(static_cast<double>(config.dim));
  std::normal_distribution<double> w(0.0, wscale);
  for (std::size_t i = lay.E; i < lay.P; ++i) m.params_[i] = emb(rng);
  for (std::size_t i = lay.P; i < lay.Wq; ++i) m.params_[i] = 0.2 * emb(rng);
  for (std::size_t i = lay.Wq; i < lay.bias; ++i) m.params_[i] = w(rng);
  return m;
}

double TeacherModel::example_loss(const Example& ex, std::vector<double>* grad) const {
  const Layout lay(n_items_, static_cast<std::size_t>(config_.dim), static_cast<std::size_t>(config_.max_len));
  const std::size_t d = lay.d;
  const auto di = static_cast<Eigen::Index>(d);
  std::span<const ItemId> window(ex.window);
  if (window.size() > lay.L) window = window.subspan(window.size() - lay.L);
  const Forward f = attend(lay, params_, window);
  CMatMap E(params_.data() + lay.E, static_cast<Eigen::Index>(lay.n), di);
  const double* bias = params_.data() + lay.bias;

  std::vector<ItemId> cand;
  cand.reserve(ex.negatives.size() + 1);
  cand.push_back(ex.target);
  cand.insert(cand.end(), ex.negatives.begin(), ex.negatives.end());
  Vec logits(static_cast<Eigen::Index>(cand.size()));
  for (std::size_t j = 0; j < cand.size(); ++j)
    logits[static_cast<Eigen::Index>(j)] = E.row(cand[j]).dot(f.o) + bias[cand[j]];
  const double mx = logits.maxCoeff();
  Vec p = (logits.array() - mx).exp();
  const double z = p.sum();
  p /= z;
  const double loss = -(logits[0] - mx - std::log(z));
  if (!grad) return loss;

  auto& g = *grad;
  MatMap dE(g.data() + lay.E, static_cast<Eigen::Index>(lay.n), di);
  MatMap dP(g.data() + lay.P, static_cast<Eigen::Index>(lay.L), di);
  MatMap dWq(g.data() + lay.Wq, di, di);
  MatMap dWk(g.data() + lay.Wk, di, di);
  MatMap dWv(g.data() + lay.Wv, di, di);
  CMatMap Wq(params_.data() + lay.Wq, di, di);
  CMatMap Wk(params_.data() + lay.Wk, di, di);
  CMatMap Wv(params_.data() + lay.Wv, di, di);

  Vec dout = Vec::Zero(di);
  for (std::size_t j = 0; j < cand.size(); ++j) {
    const double gj = p[static_cast<Eigen::Index>(j)] - (j == 0 ? 1.0 : 0.0);
    dout += gj * E.row(cand[j]).transpose();
    dE.row(cand[j]) += gj * f.o.transpose();
    g[lay.bias + static_cast<std::size_t>(cand[j])] += gj;
  }
  const auto w = static_cast<Eigen::Index>(window.size());
  Mat dX = Mat::Zero(w, di);
  dX.row(w - 1) += dout.transpose();  // residual
  // c = V^T a
  const Vec da = f.V * dout;
  const Mat dV = f.a * dout.transpose();  // [w, d]
  const double mean_da = f.a.dot(da);
  const Vec ds = f.a.array() * (da.array() - mean_da);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  const Vec dq = f.K.transpose() * ds * inv;
  const Mat dK = ds * f.q.transpose() * inv;  // [w, d]
  const Vec last = f.X.row(w - 1).transpose();
  dWq += dq * last.transpose();
  dX.row(w - 1) += (Wq.transpose() * dq).transpose();
  dWk += dK.transpose() * f.X;
  dWv += dV.transpose() * f.X;
  dX += dK * Wk + dV * Wv;
  for (Eigen::Index i = 0; i < w; ++i) {
    dE.row(window[static_cast<std::size_t>(i)]) += dX.row(i);
    dP.row(static_cast<Eigen::Index>(f.pos[static_cast<std::size_t>(i)])) += dX.row(i);
  }
  return loss;
}

std::vector<double> TeacherModel::scores(std::span<const ItemId> history) const {
  if (history.empty()) throw ArgumentError("teacher scoring needs a non-empty history");
  for (ItemId id : history)
    if (id < 0 || static_cast<std::size_t>(id) >= n_items_)
      throw LookupError("history references unknown item id " + std::to_string(id));
  std::vector<double> out(n_items_, 0.0);
  if (config_.kind == TeacherKind::markov_popularity) {
    double total = 1.0;
    for (auto c : popularity_) total += static_cast<double>(c);
    for (std::size_t i = 0; i < n_items_; ++i) out[i] = static_cast<double>(popularity_[i]) / total;
    for (const auto& [to, count] : transitions_[static_cast<std::size_t>(history.back())])
      out[static_cast<std::size_t>(to)] += static_cast<double>(count);
    return out;
  }
  const Layout lay(n_items_, static_cast<std::size_t>(config_.dim), static_cast<std::size_t>(config_.max_len));
  if (history.size() > lay.L) history = history.subspan(history.size() - lay.L);
  const Forward f = attend(lay, params_, history);
  CMatMap E(params_.data() + lay.E, static_cast<Eigen::Index>(lay.n), static_cast<Eigen::Index>(lay.d));
  Eigen::Map<Vec> s(out.data(), static_cast<Eigen::Index>(n_items_));
  s = E * f.o;
  for (std::size_t i = 0; i < n_items_; ++i) out[i] += params_[lay.bias + i];
  return out;
}

TeacherPredictions TeacherModel::predict_full_ranking(std::span<const ItemId> history) const {
  const auto s = scores(history);
  return rank_by_scores(s, std::vector<ItemId>(history.begin(), history.end()));
}

// ---------------------------------------------------------------------------

TeacherModel train_teacher(const SplitDataset& split, std::size_t n_items, const TeacherConfig& config) {
  std::size_t n_pairs = 0;
  for (const auto& u : split.users) n_pairs += u.train.size() >= 2 ? u.train.size() - 1 : 0;
  if (split.users.empty() || n_pairs == 0) throw ArgumentError("train_teacher: no training transitions");
  if (n_items == 0) throw ArgumentError("train_teacher: empty catalog");

  if (config.kind == TeacherKind::markov_popularity) {
    TeacherModel m;
    m.config_ = config;
    m.n_items_ = n_items;
    m.popularity_.assign(n_items, 0);
    m.transitions_.assign(n_items, {});
    std::vector<std::unordered_map<ItemId, std::int64_t>> counts(n_items);
    for (const auto& u : split.users) {
      for (std::size_t t = 0; t < u.train.size(); ++t) {
        ++m.popularity_[static_cast<std::size_t>(u.train[t])];
        if (t + 1 < u.train.size()) ++counts[static_cast<std::size_t>(u.train[t])][u.train[t + 1]];
      }
    }
    for (std::size_t i = 0; i < n_items; ++i) {
      m.transitions_[i].assign(counts[i].begin(), counts[i].end());
      std::sort(m.transitions_[i].begin(), m.transitions_[i].end());
    }
    return m;
  }

  TeacherModel m = TeacherModel::init_attentive(n_items, config);
  const auto L = static_cast<std::size_t>(config.max_len);
  std::vector<TeacherModel::Example> examples;
  examples.reserve(n_pairs);
  for (const auto& u : split.users) {
    for (std::size_t t = 1; t < u.train.size(); ++t) {
      TeacherModel::Example ex;
      const std::size_t lo = t > L ? t - L : 0;
      ex.window.assign(u.train.begin() + static_cast<std::ptrdiff_t>(lo), u.train.begin() + static_cast<std::ptrdiff_t>(t));
      ex.target = u.train[t];
      examples.push_back(std::move(ex));
    }
  }

  Rng rng = make_stream({config.seed, 0x7eac4e8ULL});
  std::uniform_int_distribution<ItemId> any_item(0, static_cast<ItemId>(n_items - 1));
  const std::size_t n_neg = std::min<std::size_t>(static_cast<std::size_t>(std::max(config.negatives, 1)), n_items - 1);
  Adam adam(m.params_.size(), config.lr);
  std::vector<double> grad(m.params_.size(), 0.0);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(config.batch_size, 1));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const std::size_t end = std::min(order.size(), b + batch);
      for (std::size_t i = b; i < end; ++i) {
        auto& ex = examples[order[i]];
        ex.negatives.clear();
        while (ex.negatives.size() < n_neg) {
          const ItemId neg = any_item(rng);
          if (neg != ex.target) ex.negatives.push_back(neg);
        }
        m.example_loss(ex, &grad);
      }
      const double scale = 1.0 / static_cast<double>(end - b);
      for (auto& g : grad) g *= scale;
      adam.step(m.params_, grad);
    }
  }
  return m;
}

TeacherPredictions popularity_ranking(const std::vector<std::int64_t>& popularity, std::vector<ItemId> history) {
  std::vector<double> s(popularity.begin(), popularity.end());
  return rank_by_scores(s, std::move(history));
}

namespace {
template <typename Ranker>
double hit_rate(const SplitDataset& split, Stage stage, std::size_t k, Ranker&& rank) {
  std::size_t hits = 0, n = 0;
  for (const auto& u : split.users) {
    if (!SplitDataset::usable(u, stage)) continue;
    const auto hist = split.history(u, stage);
    const TeacherPredictions p = rank(hist);
    const auto top = p.top_excluding_history(k);
    const ItemId target = SplitDataset::target(u, stage);
    hits += std::find(top.begin(), top.end(), target) != top.end() ? 1 : 0;
    ++n;
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}
}  // namespace

double teacher_hit_rate(const TeacherModel& model, const SplitDataset& split, Stage stage, std::size_t k) {
  return hit_rate(split, stage, k, [&](const std::vector<ItemId>& h) { return model.predict_full_ranking(h); });
}

double popularity_hit_rate(const std::vector<std::int64_t>& popularity, const SplitDataset& split, Stage stage,
                           std::size_t k) {
  return hit_rate(split, stage, k, [&](const std::vector<ItemId>& h) { return popularity_ranking(popularity, h); });
}

// ---------------------------------------------------------------------------
// Checkpoint: json container with a format tag, the kind and its parameters.

void TeacherModel::save(const std::filesystem::path& path) const {
  json j;
  j["format"] = "recalign-teacher";
  j["version"] = 1;
  j["kind"] = to_string(config_.kind);
  j["n_items"] = n_items_;
  j["config"] = {{"dim", config_.dim},       {"max_len", config_.max_len}, {"epochs", config_.epochs},
                 {"lr", config_.lr},         {"negatives", config_.negatives},
                 {"batch_size", config_.batch_size}, {"seed", config_.seed}};
  if (config_.kind == TeacherKind::attentive) {
    j["parameters"] = params_;
  } else {
    j["popularity"] = popularity_;
    json tr = json::array();
    for (std::size_t i = 0; i < transitions_.size(); ++i)
      for (const auto& [to, c] : transitions_[i]) tr.push_back({i, to, c});
    j["transitions"] = tr;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write teacher checkpoint " + path.string());
  out << j.dump();
}

TeacherModel TeacherModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open teacher checkpoint " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "recalign-teacher") throw std::runtime_error(path.string() + " is not a teacher checkpoint");
  if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported teacher checkpoint version");
  TeacherModel m;
  m.config_.kind = teacher_kind_from_string(j.at("kind").get<std::string>());
  const auto& c = j.at("config");
  m.config_.dim = c.at("dim");
  m.config_.max_len = c.at("max_len");
  m.config_.epochs = c.at("epochs");
  m.config_.lr = c.at("lr");
  m.config_.negatives = c.at("negatives");
  m.config_.batch_size = c.at("batch_size");
  m.config_.seed = c.at("seed");
  m.n_items_ = j.at("n_items");
  if (m.config_.kind == TeacherKind::attentive) {
    m.params_ = j.at("parameters").get<std::vector<double>>();
    const Layout lay(m.n_items_, static_cast<std::size_t>(m.config_.dim), static_cast<std::size_t>(m.config_.max_len));
    if (m.params_.size() != lay.total) throw std::runtime_error("teacher checkpoint has wrong parameter count");
  } else {
    m.popularity_ = j.at("popularity").get<std::vector<std::int64_t>>();
    m.transitions_.assign(m.n_items_, {});
    for (const auto& t : j.at("transitions"))
      m.transitions_.at(t.at(0).get<std::size_t>()).emplace_back(t.at(1).get<ItemId>(), t.at(2).get<std::int64_t>());
  }
  return m;
}

}  // namespace recalign
