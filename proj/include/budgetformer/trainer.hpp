#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "budgetformer/cost_model.hpp"
#include "budgetformer/data.hpp"
#include "budgetformer/model.hpp"
#include "budgetformer/objective.hpp"
#include "budgetformer/schedules.hpp"

namespace budgetformer {

enum class Ablation { none, fixed_budget, random_gating };

std::string ablation_name(Ablation a);

struct TrainConfig {
  int epochs = 10;
  std::int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  BudgetLossConfig budget;
  ScheduleConfig schedule;  // total_steps is overwritten by train()
  Ablation ablation = Ablation::none;
  double fixed_budget_s = 0.5;  // fixed_budget constant; random_gating fallback budget
  // random_gating freezes s; by default to fixed_budget_s, or to the per-example
  // predictions of this checkpoint's model when set
  std::string reference_checkpoint;
  SignMode sign_mode = SignMode::prose_intent;
  std::int64_t log_interval = 10;
  double grams_per_flop = 0.0;
  double divergence_limit = 1e4;

  void validate() const;
};

// One metrics-stream record. Step records carry training-side numbers;
// epoch records additionally carry validation accuracy and a cost report.
struct MetricsRecord {
  std::string kind;  // "step" or "epoch"
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  double train_accuracy = -1.0;  // negative = not measured
  double val_accuracy = -1.0;
  double s_mean = 0.0;
  double s_std = 0.0;
  double mean_k = 0.0;
  std::vector<double> s_mean_layer;
  std::vector<double> s_std_layer;
  std::vector<double> entropy_layer;  // mean sum p ln p
  std::vector<double> mean_k_layer;
  bool has_cost = false;
  CostReport cost;
};

std::string metrics_to_json(const MetricsRecord& rec);
std::string metrics_csv_header();
std::string metrics_to_csv(const MetricsRecord& rec);

// ---- optimizer ----

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;  // completed updates, drives bias correction
};

AdamState make_adam_state(const std::vector<std::pair<std::string, Tensor>>& params);

// One decoupled-weight-decay Adam update from the accumulated gradients.
// Returns false (and changes nothing) when any gradient is NaN.
bool adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                const TrainConfig& cfg);

// ---- evaluation ----

struct EvalOptions {
  std::int64_t batch_size = 16;
  std::int64_t step = 0;  // schedule position, normally the stored train step
  ScheduleConfig schedule;
  Ablation ablation = Ablation::none;
  double fixed_budget_s = 0.5;
  const Model* budget_reference = nullptr;  // random_gating frozen-s source
  std::uint64_t seed = 0;
  int force_k = 0;
  double grams_per_flop = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::int64_t examples = 0;
  double s_mean = 0.0;
  std::vector<double> s_mean_layer;
  std::vector<double> s_std_layer;
  std::vector<double> entropy_layer;
  std::vector<double> mean_k_layer;
  CostReport cost;
};

EvalResult evaluate(const Model& model, const std::vector<ClassifiedExample>& data,
                    const EvalOptions& opts);

// ---- training ----

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  double best_val_accuracy = -1.0;
  int best_epoch = -1;
  std::int64_t total_steps = 0;  // the T every schedule used
  std::int64_t final_step = 0;
  bool diverged = false;
  std::string best_checkpoint;  // empty unless out_dir given
  std::string last_checkpoint;
};

// Trains in place. When out_dir is non-empty, writes metrics.jsonl,
// metrics.csv and checkpoints/{best,last}.bin under it.
TrainResult train(Model& model, const std::vector<ClassifiedExample>& train_data,
                  const std::vector<ClassifiedExample>& val_data, const TrainConfig& cfg,
                  const std::string& out_dir = "");

// ---- analysis ----

struct AnalysisRow {
  int layer = 0;
  std::string group;  // class label or tier name
  std::int64_t count = 0;
  double s_mean = 0.0;
  double s_std = 0.0;
  double entropy_mean = 0.0;  // mean sum p ln p
  double mean_k = 0.0;
};

struct AnalysisReport {
  std::vector<AnalysisRow> by_class;
  std::vector<AnalysisRow> by_tier;
  double s_mean_overall = 0.0;
  std::int64_t examples = 0;
};

struct AnalyzeOptions {
  EvalOptions eval;
  std::int64_t attention_example = -1;  // >= 0 dumps that example's maps
};

// Aggregates budget/gating statistics; when out_dir is non-empty writes
// analysis/*.csv and (if requested) attention/example_<i>.json under it.
AnalysisReport analyze(const Model& model, const std::vector<ClassifiedExample>& data,
                       const AnalyzeOptions& opts, const std::string& out_dir = "");

}  // namespace budgetformer
