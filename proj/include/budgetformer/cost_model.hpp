#pragma once

#include <cstdint>
#include <vector>

#include "budgetformer/attention.hpp"
#include "budgetformer/model_config.hpp"

namespace budgetformer {

// Counting convention: one multiply-add pair = 2 FLOPs, and only multiply-adds
// inside matrix products count. Softmax, scaling, residual adds, normalization,
// activations and bias adds are free; table lookups (embeddings) are free.
// Under this convention the budgeted/standard attention-term ratio is exactly
// k/H, which is the point.

struct CostReport {
  std::int64_t flops_projection = 0;   // Q, K, V, O projections, all layers
  std::int64_t flops_attention = 0;    // score + value matmuls, active heads only
  std::int64_t flops_budget_nets = 0;  // f (D->D->1) and g (D->H), all layers
  std::int64_t flops_other = 0;        // feed-forward and classifier matmuls
  std::int64_t flops_total = 0;        // sum of the four buckets
  std::int64_t memory_attention = 0;   // scalar activations for attention maps
  double ratio_attention = 1.0;        // budgeted/standard attention term = mean k/H
  double mean_budget = 0.0;            // mean predicted s, reported for comparison
  double carbon_proxy = 0.0;           // flops_total * grams_per_flop
};

struct AttentionFlops {
  std::int64_t projection = 0;
  std::int64_t attention = 0;
};

// One attention layer on a B x N batch with k_active of H heads computed.
AttentionFlops attention_flops(std::int64_t batch, std::int64_t seq_len, int model_dim,
                               int heads, int k_active);

// Budget + gating networks for one layer; independent of sequence length.
std::int64_t budget_net_flops(std::int64_t batch, int model_dim, int heads);

// Mean over layers of k/H. Exact: computed as sum(k) / (layers * H).
double inference_ratio(const std::vector<int>& k_per_layer, int heads);

// Attention score/probability storage in scalars.
std::int64_t attention_memory(std::int64_t batch, std::int64_t seq_len, int k_active);

// Proportionality only; no hardware model.
double carbon_proxy(double flops_total, double grams_per_flop);

// Whole-model cost for one B x N batch. selections is [layers][batch] as
// returned by a budgeted forward pass (ignored for standard models). Training
// mode charges every head; inference mode charges each example's realized k.
CostReport model_cost(const ModelConfig& cfg, std::int64_t batch, std::int64_t seq_len,
                      const std::vector<std::vector<HeadSelection>>& selections, Mode mode,
                      double grams_per_flop = 0.0);

}  // namespace budgetformer
