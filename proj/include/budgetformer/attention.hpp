#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "budgetformer/rng.hpp"
#include "budgetformer/schedules.hpp"
#include "budgetformer/tensor.hpp"

namespace budgetformer {

enum class Mode { train, inference };

struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // all [D, D], no biases
  int heads = 1;
  int head_dim = 1;

  int model_dim() const { return heads * head_dim; }
  // throws ParameterError unless model_dim divides evenly into heads
  static AttentionParams create(int model_dim, int heads, Rng& rng);
};

// The two small nets driving head selection: f (two-layer ReLU MLP, D -> D -> 1)
// produces the budget logit; g (linear, D -> H) produces raw head scores.
struct BudgetNets {
  Tensor f1_w, f1_b;  // [D, D], [D]
  Tensor f2_w, f2_b;  // [D, 1], [1]
  Tensor g_w, g_b;    // [D, H], [H]

  static BudgetNets create(int model_dim, int heads, Rng& rng);
};

// Everything decided about one example's heads in one layer, recorded on
// every forward pass for analysis and for the cost model.
struct HeadSelection {
  double budget = 0.0;               // s in (0,1)
  std::vector<double> scores;        // z, length H
  std::vector<double> probs;         // p, sums to 1
  std::vector<double> weights;       // w_i = s * H * p_i
  std::vector<std::uint8_t> active;  // m, exactly k ones
  int active_count = 0;              // k = max(1, floor(s*H)), or the forced k
};

// Identifies the noise stream of one train-mode forward call; per-example
// streams are derived from (seed, step, layer, example) so batch order and
// any intra-batch parallelism cannot change the draws.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  int layer = 0;
};

// Optional capture of attention probabilities for the analysis dump.
// probs[b][h] is an N x N row-major matrix; heads never computed stay empty.
struct AttentionDump {
  std::vector<std::vector<std::vector<double>>> probs;
};

// pad_mask rows are 0/1 with at least one 1; throws DegenerateInputError
void validate_pad_mask(const Tensor& pad_mask);

// Plain multi-head attention: per-head scaled dot product with padded keys
// excluded, heads concatenated, projected by w_o. x is [B, N, D].
Tensor standard_mha(const Tensor& x, const AttentionParams& params,
                    const Tensor& pad_mask);

// s = sigmoid of the budget-net logit; pooled is [B, D], result [B]
Tensor compute_budget(const Tensor& pooled, const BudgetNets& nets);

// raw head scores [B, H]; train mode adds N(0, noise_scale(t)^2) per head
Tensor head_scores(const Tensor& pooled, const BudgetNets& nets, std::int64_t t,
                   const ScheduleConfig& cfg, const NoiseKey& noise, Mode mode);

// temperature-scaled softmax over heads at tau(t)
Tensor head_probs(const Tensor& scores, std::int64_t t, const ScheduleConfig& cfg);

// w_i = s * H * p_i
std::vector<double> head_weights(double s, const std::vector<double>& p);
Tensor head_weights(const Tensor& s, const Tensor& p);  // [B], [B,H] -> [B,H]

// k = max(1, floor(s*H)); mask marks the k largest probs, ties to the
// lowest head index. s must lie in (0,1).
std::pair<int, std::vector<std::uint8_t>> select_top_k(const std::vector<double>& probs,
                                                       double s);

struct BudgetedAttentionOptions {
  Mode mode = Mode::inference;
  std::int64_t step = 0;
  ScheduleConfig schedule;
  NoiseKey noise;      // train mode only
  int force_k = 0;     // >0 overrides k for every example (clamped to [1, H])
  bool allow_skip = true;  // B==1 inference skips inactive heads entirely
  AttentionDump* dump = nullptr;
  // budget/gating nets pool this instead of x when set (the encoder block
  // normalizes x before attention but budgets from its raw input)
  const Tensor* pool_input = nullptr;
  // ablations: a value in (0,1] replaces the learned budget with a constant
  // (f nets see no gradient; s = 1 activates every head); random_gating
  // replaces the head scores with a seeded random permutation per example
  // (g net sees no gradient)
  double fixed_budget = 0.0;
  const std::vector<double>* budget_rows = nullptr;  // per-example frozen s, wins over fixed_budget
  bool random_gating = false;
};

struct BudgetedAttentionResult {
  Tensor output;  // [B, N, D]
  Tensor budget;  // [B]; part of the graph in train mode
  Tensor probs;   // [B, H]; part of the graph in train mode
  std::vector<HeadSelection> selections;  // one per example
};

// Train mode weights every head by w. Inference keeps only the top-k heads
// (exact zeros elsewhere); with one example the inactive heads are never
// computed at all, and the two paths agree bit-for-bit.
BudgetedAttentionResult budgeted_attention(const Tensor& x, const AttentionParams& params,
                                           const BudgetNets& nets, const Tensor& pad_mask,
                                           const BudgetedAttentionOptions& opts);

}  // namespace budgetformer
