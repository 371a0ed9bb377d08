#pragma once

#include <cstdint>
#include <string>

#include "budgetformer/model_config.hpp"
#include "budgetformer/trainer.hpp"

namespace budgetformer {

// Everything a reproducible run needs, editable as one flat JSON document:
// model shape, optimization settings, data source, and artifact paths.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // data source; JSONL paths win over the synthetic generator when set
  std::string train_jsonl;
  std::string val_jsonl;
  std::string vocab_json;  // reuse a saved vocabulary (JSONL sources only)
  std::string task = "keyword";
  std::int64_t train_examples = 2000;
  std::int64_t val_examples = 500;
  int distractor_words = 50;

  std::string output_dir = "runs/latest";

  RunConfig();  // desk-scale defaults

  void validate() const;  // throws ParameterError with the offending field
};

// Flat JSON text <-> config. Unknown keys and wrong value types are
// ParameterErrors naming the key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);  // IoError when unreadable

// "key=value" from the command line; the value is parsed like a JSON scalar
// and falls back to a plain string.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Fully resolved snapshot with every key present, stable key order.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace budgetformer
