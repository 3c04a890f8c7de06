// SPDX-License-Identifier: Apache-2.0
#include "recalign/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "recalign/errors.hpp"

namespace recalign {

namespace {

// Reads known keys from a mapping and rejects the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ArgumentError("config: '" + path_ + "' must be a mapping");
  }
  ~Section() noexcept(false) {
    if (!node_ || !node_.IsMap() || std::uncaught_exceptions()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ArgumentError("config: unknown key '" + path_ + key + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_.IsMap() || !node_[key]) return;
    try {
      out = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw ArgumentError("config: bad value for '" + path_ + key + "'");
    }
  }
  bool has(const char* key) const { return node_ && node_.IsMap() && node_[key]; }
  Section child(const char* key) {
    seen_.insert(key);
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), path_ + key + ".");
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_synth(Section s, SynthConfig& c) {
  s.get("n_items", c.n_items);
  s.get("n_categories", c.n_categories);
  s.get("n_users", c.n_users);
  s.get("seed", c.seed);
  s.get("min_length", c.min_length);
  s.get("max_length", c.max_length);
  s.get("successors", c.successors);
  s.get("follow_transition", c.follow_transition);
  s.get("category_concentration", c.category_concentration);
}

void emit_kv(YAML::Emitter& e, const char* key, const auto& value) { e << YAML::Key << key << YAML::Value << value; }

void emit_catalog(YAML::Emitter& e, const CatalogSource& c) {
  e << YAML::BeginMap;
  emit_kv(e, "interactions", c.interactions.string());
  emit_kv(e, "items", c.items.string());
  emit_kv(e, "format", c.format == InteractionFormat::tabular ? "tabular" : "json_lines");
  emit_kv(e, "max_history", c.max_history);
  e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  emit_kv(e, "n_items", c.synth.n_items);
  emit_kv(e, "n_categories", c.synth.n_categories);
  emit_kv(e, "n_users", c.synth.n_users);
  emit_kv(e, "seed", c.synth.seed);
  emit_kv(e, "min_length", c.synth.min_length);
  emit_kv(e, "max_length", c.synth.max_length);
  emit_kv(e, "successors", c.synth.successors);
  emit_kv(e, "follow_transition", c.synth.follow_transition);
  emit_kv(e, "category_concentration", c.synth.category_concentration);
  e << YAML::EndMap << YAML::EndMap;
}

void emit_teacher(YAML::Emitter& e, const TeacherConfig& t) {
  e << YAML::BeginMap;
  emit_kv(e, "kind", to_string(t.kind));
  emit_kv(e, "dim", t.dim);
  emit_kv(e, "max_len", t.max_len);
  emit_kv(e, "epochs", t.epochs);
  emit_kv(e, "lr", t.lr);
  emit_kv(e, "negatives", t.negatives);
  emit_kv(e, "batch_size", t.batch_size);
  emit_kv(e, "seed", t.seed);
  e << YAML::EndMap;
}

void emit_dataset(YAML::Emitter& e, const DatasetConfig& d) {
  e << YAML::BeginMap;
  emit_kv(e, "i0", d.quota.i0);
  emit_kv(e, "i1", d.quota.i1);
  emit_kv(e, "i2", d.quota.i2);
  emit_kv(e, "i3", d.quota.i3);
  emit_kv(e, "k_min", d.k_min);
  emit_kv(e, "k_max", d.k_max);
  emit_kv(e, "retry_cap", d.retry_cap);
  emit_kv(e, "valid_per_kind", d.valid_per_kind);
  e << YAML::EndMap;
}

void emit_policy(YAML::Emitter& e, const PolicyConfig& p) {
  e << YAML::BeginMap;
  emit_kv(e, "dim", p.dim);
  emit_kv(e, "intent_dim", p.intent_dim);
  emit_kv(e, "hidden", p.hidden);
  emit_kv(e, "critic_hidden", p.critic_hidden);
  emit_kv(e, "cap_extra", p.cap_extra);
  emit_kv(e, "n_distractors", p.n_distractors);
  emit_kv(e, "init_scale", p.init_scale);
  emit_kv(e, "seed", p.seed);
  e << YAML::EndMap;
}

void emit_sl(YAML::Emitter& e, const SlConfig& s) {
  e << YAML::BeginMap;
  emit_kv(e, "epochs", s.epochs);
  emit_kv(e, "lr", s.lr);
  emit_kv(e, "batch_size", s.batch_size);
  emit_kv(e, "keep_best", s.keep_best);
  emit_kv(e, "seed", s.seed);
  e << YAML::EndMap;
}

void emit_rl(YAML::Emitter& e, const RlConfig& r) {
  e << YAML::BeginMap;
  emit_kv(e, "gamma", r.gamma);
  emit_kv(e, "lambda", r.lambda);
  emit_kv(e, "epsilon", r.epsilon);
  emit_kv(e, "critic_weight", r.critic_weight);
  emit_kv(e, "entropy_weight", r.entropy_weight);
  emit_kv(e, "lr", r.lr);
  emit_kv(e, "temperature", r.temperature);
  emit_kv(e, "samples_per_instruction", r.samples_per_instruction);
  emit_kv(e, "instructions_per_step", r.instructions_per_step);
  emit_kv(e, "max_steps", r.max_steps);
  emit_kv(e, "ppo_epochs", r.ppo_epochs);
  emit_kv(e, "validate_every", r.validate_every);
  emit_kv(e, "normalize_advantages", r.normalize_advantages);
  emit_kv(e, "seed", r.seed);
  e << YAML::Key << "reward" << YAML::Value << YAML::BeginMap;
  emit_kv(e, "alpha", r.reward.alpha);
  emit_kv(e, "eta", r.reward.eta);
  emit_kv(e, "list_amplification", r.reward.list_amplification);
  emit_kv(e, "whitening", r.reward.whitening);
  e << YAML::EndMap << YAML::EndMap;
}

void emit_eval(YAML::Emitter& e, const EvalConfig& v) {
  e << YAML::BeginMap;
  emit_kv(e, "n_samples", v.n_samples);
  emit_kv(e, "combo", v.combo);
  emit_kv(e, "csv", v.csv);
  e << YAML::EndMap;
}

template <class F, class T>
std::string emitted(F f, const T& value) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  f(e, value);
  return e.c_str();
}

std::string hex_hash(const std::string& text, std::uint64_t h) {
  h = fnv1a(text.data(), text.size(), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf).substr(0, 12);
}

std::uint64_t parse_hex(const std::string& h) { return std::stoull(h, nullptr, 16); }

}  // namespace

void ExperimentConfig::validate() const {
  if (catalog.interactions.empty() != catalog.items.empty())
    throw ArgumentError("config: catalog.interactions and catalog.items must be given together");
  if (catalog.max_history < 1) throw ArgumentError("config: catalog.max_history must be at least 1");
  if (teacher.dim < 1 || teacher.dim > 64) throw ArgumentError("config: teacher.dim must lie in 1..64");
  if (dataset.k_min < 1 || dataset.k_max < dataset.k_min) throw ArgumentError("config: invalid dataset k range");
  if (sl.epochs < 0 || sl.batch_size < 1 || !(sl.lr > 0)) throw ArgumentError("config: invalid sl section");
  rl.validate();
  for (double a : sweep.values)
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("config: sweep values must lie in [0, 1]");
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ArgumentError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  {
    Section top(root, "");
    top.get("seed", c.seed);
    c.catalog.synth.seed = c.teacher.seed = c.policy.seed = c.sl.seed = c.rl.seed = c.seed;
    std::string out = c.output_dir.string();
    top.get("output_dir", out);
    c.output_dir = out;

    {
      Section s = top.child("catalog");
      std::string interactions, items, format = "tabular";
      s.get("interactions", interactions);
      s.get("items", items);
      s.get("format", format);
      s.get("max_history", c.catalog.max_history);
      c.catalog.interactions = interactions;
      c.catalog.items = items;
      if (format == "tabular") c.catalog.format = InteractionFormat::tabular;
      else if (format == "json_lines") c.catalog.format = InteractionFormat::json_lines;
      else throw ArgumentError("config: catalog.format must be tabular or json_lines");
      read_synth(s.child("synthetic"), c.catalog.synth);
    }
    {
      Section s = top.child("teacher");
      std::string kind = to_string(c.teacher.kind);
      s.get("kind", kind);
      c.teacher.kind = teacher_kind_from_string(kind);
      s.get("dim", c.teacher.dim);
      s.get("max_len", c.teacher.max_len);
      s.get("epochs", c.teacher.epochs);
      s.get("lr", c.teacher.lr);
      s.get("negatives", c.teacher.negatives);
      s.get("batch_size", c.teacher.batch_size);
      s.get("seed", c.teacher.seed);
    }
    {
      Section s = top.child("dataset");
      s.get("i0", c.dataset.quota.i0);
      s.get("i1", c.dataset.quota.i1);
      s.get("i2", c.dataset.quota.i2);
      s.get("i3", c.dataset.quota.i3);
      s.get("k_min", c.dataset.k_min);
      s.get("k_max", c.dataset.k_max);
      s.get("retry_cap", c.dataset.retry_cap);
      s.get("valid_per_kind", c.dataset.valid_per_kind);
    }
    {
      Section s = top.child("policy");
      s.get("dim", c.policy.dim);
      s.get("intent_dim", c.policy.intent_dim);
      s.get("hidden", c.policy.hidden);
      s.get("critic_hidden", c.policy.critic_hidden);
      s.get("cap_extra", c.policy.cap_extra);
      s.get("n_distractors", c.policy.n_distractors);
      s.get("init_scale", c.policy.init_scale);
      s.get("seed", c.policy.seed);
    }
    {
      Section s = top.child("sl");
      s.get("epochs", c.sl.epochs);
      s.get("lr", c.sl.lr);
      s.get("batch_size", c.sl.batch_size);
      s.get("keep_best", c.sl.keep_best);
      s.get("seed", c.sl.seed);
    }
    {
      Section s = top.child("rl");
      s.get("gamma", c.rl.gamma);
      s.get("lambda", c.rl.lambda);
      s.get("epsilon", c.rl.epsilon);
      s.get("critic_weight", c.rl.critic_weight);
      s.get("entropy_weight", c.rl.entropy_weight);
      s.get("lr", c.rl.lr);
      s.get("temperature", c.rl.temperature);
      s.get("samples_per_instruction", c.rl.samples_per_instruction);
      s.get("instructions_per_step", c.rl.instructions_per_step);
      s.get("max_steps", c.rl.max_steps);
      s.get("ppo_epochs", c.rl.ppo_epochs);
      s.get("validate_every", c.rl.validate_every);
      s.get("normalize_advantages", c.rl.normalize_advantages);
      s.get("seed", c.rl.seed);
      Section r = s.child("reward");
      r.get("alpha", c.rl.reward.alpha);
      r.get("eta", c.rl.reward.eta);
      r.get("list_amplification", c.rl.reward.list_amplification);
      r.get("whitening", c.rl.reward.whitening);
    }
    {
      Section s = top.child("eval");
      s.get("n_samples", c.eval.n_samples);
      s.get("combo", c.eval.combo);
      s.get("csv", c.eval.csv);
    }
    {
      Section s = top.child("sweep");
      s.get("values", c.sweep.values);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  emit_kv(e, "seed", c.seed);
  emit_kv(e, "output_dir", c.output_dir.string());
  e << YAML::Key << "catalog" << YAML::Value;
  emit_catalog(e, c.catalog);
  e << YAML::Key << "teacher" << YAML::Value;
  emit_teacher(e, c.teacher);
  e << YAML::Key << "dataset" << YAML::Value;
  emit_dataset(e, c.dataset);
  e << YAML::Key << "policy" << YAML::Value;
  emit_policy(e, c.policy);
  e << YAML::Key << "sl" << YAML::Value;
  emit_sl(e, c.sl);
  e << YAML::Key << "rl" << YAML::Value;
  emit_rl(e, c.rl);
  e << YAML::Key << "eval" << YAML::Value;
  emit_eval(e, c.eval);
  e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "values" << YAML::Value << YAML::Flow << c.sweep.values;
  e << YAML::EndMap << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

ConfigHashes config_hashes(const ExperimentConfig& c) {
  ConfigHashes h;
  h.catalog = hex_hash(emitted(emit_catalog, c.catalog), fnv1a("catalog", 7));
  h.teacher = hex_hash(emitted(emit_teacher, c.teacher), parse_hex(h.catalog));
  h.dataset = hex_hash(emitted(emit_dataset, c.dataset) + std::to_string(c.seed), parse_hex(h.teacher));
  h.sl = hex_hash(emitted(emit_policy, c.policy) + emitted(emit_sl, c.sl), parse_hex(h.dataset));
  h.rl = hex_hash(emitted(emit_rl, c.rl), parse_hex(h.sl));
  h.eval = hex_hash(emitted(emit_eval, c.eval) + std::to_string(c.seed), parse_hex(h.rl));
  return h;
}

}  // namespace recalign
