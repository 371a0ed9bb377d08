#include "budgetformer/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "budgetformer/errors.hpp"

namespace budgetformer {

namespace {

using nlohmann::json;

std::int64_t as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ParameterError("config: '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) {
    throw ParameterError("config: '" + key + "' must be a number");
  }
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) {
    throw ParameterError("config: '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

void set_field(RunConfig& cfg, const std::string& key, const json& v) {
  auto int_field = [&](auto& slot) { slot = static_cast<std::decay_t<decltype(slot)>>(as_int(v, key)); };
  auto num_field = [&](double& slot) { slot = as_double(v, key); };

  if (key == "vocab_size") int_field(cfg.model.vocab_size);
  else if (key == "max_seq_len") int_field(cfg.model.max_seq_len);
  else if (key == "model_dim") int_field(cfg.model.model_dim);
  else if (key == "heads") int_field(cfg.model.heads);
  else if (key == "layers") int_field(cfg.model.layers);
  else if (key == "classes") int_field(cfg.model.classes);
  else if (key == "ffn_multiplier") int_field(cfg.model.ffn_multiplier);
  else if (key == "dropout") num_field(cfg.model.dropout_rate);
  else if (key == "attention") {
    std::string name = as_string(v, key);
    if (name == "budgeted") cfg.model.attention_kind = AttentionKind::budgeted;
    else if (name == "standard") cfg.model.attention_kind = AttentionKind::standard;
    else throw ParameterError("config: 'attention' must be budgeted or standard, got '" + name + "'");
  } else if (key == "epochs") int_field(cfg.train.epochs);
  else if (key == "batch_size") int_field(cfg.train.batch_size);
  else if (key == "learning_rate") num_field(cfg.train.learning_rate);
  else if (key == "weight_decay") num_field(cfg.train.weight_decay);
  else if (key == "adam_beta1") num_field(cfg.train.adam_beta1);
  else if (key == "adam_beta2") num_field(cfg.train.adam_beta2);
  else if (key == "adam_epsilon") num_field(cfg.train.adam_epsilon);
  else if (key == "seed") {
    if (as_int(v, key) < 0) throw ParameterError("config: 'seed' must be non-negative");
    cfg.train.seed = v.get<std::uint64_t>();
  } else if (key == "ablation") {
    std::string name = as_string(v, key);
    if (name == "none") cfg.train.ablation = Ablation::none;
    else if (name == "fixed_budget") cfg.train.ablation = Ablation::fixed_budget;
    else if (name == "random_gating") cfg.train.ablation = Ablation::random_gating;
    else throw ParameterError("config: unknown ablation '" + name + "'");
  } else if (key == "fixed_budget_s") num_field(cfg.train.fixed_budget_s);
  else if (key == "reference_checkpoint") cfg.train.reference_checkpoint = as_string(v, key);
  else if (key == "sign_mode") {
    std::string name = as_string(v, key);
    if (name == "prose_intent") cfg.train.sign_mode = SignMode::prose_intent;
    else if (name == "as_written") cfg.train.sign_mode = SignMode::as_written;
    else throw ParameterError("config: unknown sign_mode '" + name + "'");
  } else if (key == "log_interval") int_field(cfg.train.log_interval);
  else if (key == "grams_per_flop") num_field(cfg.train.grams_per_flop);
  else if (key == "divergence_limit") num_field(cfg.train.divergence_limit);
  else if (key == "s_min") num_field(cfg.train.budget.s_min);
  else if (key == "s_max") num_field(cfg.train.budget.s_max);
  else if (key == "alpha_base") num_field(cfg.train.budget.alpha_base);
  else if (key == "alpha_max") num_field(cfg.train.budget.alpha_max);
  else if (key == "sigma_max") num_field(cfg.train.schedule.sigma_max);
  else if (key == "tau_min") num_field(cfg.train.schedule.tau_min);
  else if (key == "tau_max") num_field(cfg.train.schedule.tau_max);
  else if (key == "gamma") num_field(cfg.train.schedule.gamma);
  else if (key == "beta_max") num_field(cfg.train.schedule.beta_max);
  else if (key == "train_jsonl") cfg.train_jsonl = as_string(v, key);
  else if (key == "val_jsonl") cfg.val_jsonl = as_string(v, key);
  else if (key == "vocab_json") cfg.vocab_json = as_string(v, key);
  else if (key == "task") cfg.task = as_string(v, key);
  else if (key == "train_examples") int_field(cfg.train_examples);
  else if (key == "val_examples") int_field(cfg.val_examples);
  else if (key == "distractor_words") int_field(cfg.distractor_words);
  else if (key == "output_dir") cfg.output_dir = as_string(v, key);
  else throw ParameterError("config: unknown key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  model.model_dim = 64;
  model.heads = 8;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!train.reference_checkpoint.empty() &&
      !std::filesystem::exists(train.reference_checkpoint)) {
    throw ParameterError("config: 'reference_checkpoint' path '" + train.reference_checkpoint +
                         "' does not exist");
  }
  if (train_jsonl.empty()) {
    if (task != "keyword" && task != "composition") {
      throw ParameterError("config: 'task' must be keyword or composition, got '" + task + "'");
    }
    if (train_examples < 1) throw ParameterError("config: 'train_examples' must be >= 1");
    if (val_examples < 0) throw ParameterError("config: 'val_examples' must be >= 0");
    if (distractor_words < 1) throw ParameterError("config: 'distractor_words' must be >= 1");
    std::int64_t needed = 2 + model.classes + distractor_words;
    if (model.vocab_size < needed) {
      throw ParameterError("config: 'vocab_size' " + std::to_string(model.vocab_size) +
                           " too small for the synthetic task (needs " +
                           std::to_string(needed) + ")");
    }
  } else {
    if (!std::filesystem::exists(train_jsonl)) {
      throw ParameterError("config: 'train_jsonl' path '" + train_jsonl + "' does not exist");
    }
    if (!val_jsonl.empty() && !std::filesystem::exists(val_jsonl)) {
      throw ParameterError("config: 'val_jsonl' path '" + val_jsonl + "' does not exist");
    }
    if (!vocab_json.empty() && !std::filesystem::exists(vocab_json)) {
      throw ParameterError("config: 'vocab_json' path '" + vocab_json + "' does not exist");
    }
  }
}

RunConfig parse_run_config(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ParameterError("config: not valid JSON");
  if (!doc.is_object()) throw ParameterError("config: top level must be an object");
  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) set_field(cfg, key, value);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ParameterError("override '" + assignment + "' is not key=value");
  }
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded() || value.is_object() || value.is_array()) {
    value = raw;  // unquoted strings arrive here
  }
  set_field(cfg, key, value);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json doc;
  doc["vocab_size"] = cfg.model.vocab_size;
  doc["max_seq_len"] = cfg.model.max_seq_len;
  doc["model_dim"] = cfg.model.model_dim;
  doc["heads"] = cfg.model.heads;
  doc["layers"] = cfg.model.layers;
  doc["classes"] = cfg.model.classes;
  doc["ffn_multiplier"] = cfg.model.ffn_multiplier;
  doc["dropout"] = cfg.model.dropout_rate;
  doc["attention"] =
      cfg.model.attention_kind == AttentionKind::budgeted ? "budgeted" : "standard";
  doc["epochs"] = cfg.train.epochs;
  doc["batch_size"] = cfg.train.batch_size;
  doc["learning_rate"] = cfg.train.learning_rate;
  doc["weight_decay"] = cfg.train.weight_decay;
  doc["adam_beta1"] = cfg.train.adam_beta1;
  doc["adam_beta2"] = cfg.train.adam_beta2;
  doc["adam_epsilon"] = cfg.train.adam_epsilon;
  doc["seed"] = cfg.train.seed;
  doc["ablation"] = ablation_name(cfg.train.ablation);
  doc["fixed_budget_s"] = cfg.train.fixed_budget_s;
  doc["reference_checkpoint"] = cfg.train.reference_checkpoint;
  doc["sign_mode"] = cfg.train.sign_mode == SignMode::prose_intent ? "prose_intent" : "as_written";
  doc["log_interval"] = cfg.train.log_interval;
  doc["grams_per_flop"] = cfg.train.grams_per_flop;
  doc["divergence_limit"] = cfg.train.divergence_limit;
  doc["s_min"] = cfg.train.budget.s_min;
  doc["s_max"] = cfg.train.budget.s_max;
  doc["alpha_base"] = cfg.train.budget.alpha_base;
  doc["alpha_max"] = cfg.train.budget.alpha_max;
  doc["sigma_max"] = cfg.train.schedule.sigma_max;
  doc["tau_min"] = cfg.train.schedule.tau_min;
  doc["tau_max"] = cfg.train.schedule.tau_max;
  doc["gamma"] = cfg.train.schedule.gamma;
  doc["beta_max"] = cfg.train.schedule.beta_max;
  doc["train_jsonl"] = cfg.train_jsonl;
  doc["val_jsonl"] = cfg.val_jsonl;
  doc["vocab_json"] = cfg.vocab_json;
  doc["task"] = cfg.task;
  doc["train_examples"] = cfg.train_examples;
  doc["val_examples"] = cfg.val_examples;
  doc["distractor_words"] = cfg.distractor_words;
  doc["output_dir"] = cfg.output_dir;
  return doc.dump(2) + "\n";
}

}  // namespace budgetformer
