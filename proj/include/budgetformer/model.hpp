#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "budgetformer/attention.hpp"
#include "budgetformer/model_config.hpp"
#include "budgetformer/schedules.hpp"
#include "budgetformer/tensor.hpp"

namespace budgetformer {

struct ForwardOptions {
  Mode mode = Mode::inference;
  std::int64_t step = 0;
  ScheduleConfig schedule;
  std::uint64_t run_seed = 0;  // drives head-score noise and dropout streams
  int force_k = 0;
  bool allow_skip = true;
  std::vector<AttentionDump>* dumps = nullptr;  // one per layer when set
  double fixed_budget = 0.0;  // ablation passthrough
  bool random_gating = false;
  // per-layer, per-example frozen budgets (random_gating with a reference model)
  const std::vector<std::vector<double>>* budget_rows = nullptr;
};

struct ForwardResult {
  Tensor logits;                                       // [B, C]
  std::vector<std::vector<HeadSelection>> selections;  // [L][B]; empty when standard
  std::vector<Tensor> budgets;     // per layer, [B]; graph-connected in train mode
  std::vector<Tensor> head_probs;  // per layer, [B, H]
  std::int64_t truncated = 0;      // examples cut down to max_seq_len
};

struct EncoderBlock {
  Tensor ln1_gain, ln1_bias;
  AttentionParams attn;
  BudgetNets budget;  // budgeted models only
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // stable name -> tensor view of every trainable parameter
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor parameter(const std::string& name) const;  // throws ParameterError when absent
  std::int64_t parameter_count() const;

  ForwardResult forward(const std::vector<std::int64_t>& token_ids, const Tensor& pad_mask,
                        const ForwardOptions& opts) const;

 private:
  ModelConfig cfg_;
  Tensor token_embed_;  // [V, D]
  Tensor pos_embed_;    // [max_seq_len, D]
  std::vector<EncoderBlock> blocks_;
  Tensor classifier_w_, classifier_b_;
  std::vector<std::pair<std::string, Tensor>> params_;

  void register_params();
};

// Versioned binary checkpoint; round-trips bitwise. progress stores the
// (step, horizon) pair the schedules need at evaluation time.
struct TrainProgress {
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
};

void save_checkpoint(const Model& model, const TrainProgress& progress,
                     const std::string& path);

struct LoadedCheckpoint {
  Model model;
  TrainProgress progress;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace budgetformer
