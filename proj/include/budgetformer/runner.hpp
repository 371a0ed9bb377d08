#pragma once

#include <string>
#include <vector>

#include "budgetformer/run_config.hpp"
#include "budgetformer/trainer.hpp"

namespace budgetformer {

struct RunData {
  std::vector<ClassifiedExample> train;
  std::vector<ClassifiedExample> val;
  Vocabulary vocab;
};

// Resolve the configured source. JSONL paths win when set (the vocabulary
// comes from vocab_json or is built from the train file); otherwise the
// synthetic generator runs with seed for train and seed+1 for validation.
RunData build_run_data(const RunConfig& cfg);

// Validation-side data only, for eval/analyze against a checkpoint.
RunData build_eval_data(const RunConfig& cfg);

void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

struct TrainingRun {
  TrainResult result;
  std::string out_dir;
};

// Full training run: data, model, trainer, and artifacts under
// cfg.output_dir (resolved_config.json, vocab.json, metrics, checkpoints).
TrainingRun run_training(const RunConfig& cfg);

struct EvalRun {
  EvalResult result;
  double mean_k = 0.0;  // averaged over layers
  std::string report_path;  // cost_report.json when out_dir given
};

// Evaluate a checkpoint on the configured validation data. The schedule
// position comes from the checkpoint's stored training progress.
EvalRun run_eval(const std::string& checkpoint_path, const RunConfig& cfg, int force_k,
                 const std::string& out_dir);

struct AblationRow {
  std::string variant;  // "s=<value>" or "learned"/"random_gating"
  double value = 0.0;   // grid s (fixed_budget rows only)
  double accuracy = 0.0;
  double mean_k = 0.0;
  double ratio_attention = 1.0;
};

struct AblationRun {
  std::vector<AblationRow> rows;
  std::string table_path;  // comparison.csv
};

// fixed_budget: one training+eval per grid value. random_gating: learned
// vs random pair (grid ignored). Runs are sequential unless parallel.
AblationRun run_ablation(const RunConfig& base, Ablation mode, const std::vector<double>& grid,
                         bool parallel);

// Budget/gating statistics over the configured validation data; dumps the
// attention maps of one example when example_index >= 0.
AnalysisReport run_analysis(const std::string& checkpoint_path, const RunConfig& cfg,
                            std::int64_t example_index);

}  // namespace budgetformer
