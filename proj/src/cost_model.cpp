#include "budgetformer/cost_model.hpp"

#include <string>

#include "budgetformer/errors.hpp"

namespace budgetformer {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ParameterError("config: vocab_size must be at least 2");
  if (max_seq_len < 1) throw ParameterError("config: max_seq_len must be positive");
  if (heads < 1) throw ParameterError("config: heads must be positive");
  if (model_dim < 1 || model_dim % heads != 0) {
    throw ParameterError("config: model_dim " + std::to_string(model_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (layers < 1) throw ParameterError("config: layers must be at least 1");
  if (classes < 2) throw ParameterError("config: classes must be at least 2");
  if (ffn_multiplier < 1) throw ParameterError("config: ffn_multiplier must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ParameterError("config: dropout_rate must lie in [0, 1)");
  }
}

AttentionFlops attention_flops(std::int64_t batch, std::int64_t seq_len, int model_dim,
                               int heads, int k_active) {
  if (heads < 1 || model_dim % heads != 0) {
    throw ParameterError("attention_flops: model_dim " + std::to_string(model_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (k_active < 1 || k_active > heads) {
    throw ParameterError("attention_flops: k_active " + std::to_string(k_active) +
                         " outside [1, " + std::to_string(heads) + "]");
  }
  std::int64_t d = model_dim;
  std::int64_t dh = d / heads;
  AttentionFlops f;
  f.projection = batch * 8 * seq_len * d * d;
  f.attention = batch * k_active * 4 * seq_len * seq_len * dh;
  return f;
}

std::int64_t budget_net_flops(std::int64_t batch, int model_dim, int heads) {
  std::int64_t d = model_dim, h = heads;
  return batch * (2 * d * d + 2 * d + 2 * d * h);
}

double inference_ratio(const std::vector<int>& k_per_layer, int heads) {
  if (k_per_layer.empty()) return 1.0;
  std::int64_t sum = 0;
  for (int k : k_per_layer) {
    if (k < 1 || k > heads) {
      throw ParameterError("inference_ratio: k " + std::to_string(k) + " outside [1, " +
                           std::to_string(heads) + "]");
    }
    sum += k;
  }
  return static_cast<double>(sum) /
         static_cast<double>(static_cast<std::int64_t>(k_per_layer.size()) * heads);
}

std::int64_t attention_memory(std::int64_t batch, std::int64_t seq_len, int k_active) {
  return batch * k_active * seq_len * seq_len;
}

double carbon_proxy(double flops_total, double grams_per_flop) {
  if (grams_per_flop < 0.0) {
    throw ParameterError("carbon_proxy: grams_per_flop must be non-negative");
  }
  return flops_total * grams_per_flop;
}

CostReport model_cost(const ModelConfig& cfg, std::int64_t batch, std::int64_t seq_len,
                      const std::vector<std::vector<HeadSelection>>& selections, Mode mode,
                      double grams_per_flop) {
  cfg.validate();
  bool budgeted = cfg.attention_kind == AttentionKind::budgeted;
  if (budgeted && static_cast<int>(selections.size()) != cfg.layers) {
    throw ContractError("model_cost: budgeted model needs one selection list per layer");
  }

  std::int64_t d = cfg.model_dim;
  std::int64_t dh = d / cfg.heads;
  CostReport r;
  std::int64_t k_sum = 0;
  double s_sum = 0.0;
  std::int64_t s_count = 0;

  for (int l = 0; l < cfg.layers; ++l) {
    r.flops_projection += batch * 8 * seq_len * d * d;
    if (budgeted) {
      r.flops_budget_nets += budget_net_flops(batch, cfg.model_dim, cfg.heads);
      if (static_cast<std::int64_t>(selections[static_cast<std::size_t>(l)].size()) != batch) {
        throw ContractError("model_cost: selection list length must equal the batch size");
      }
      for (const HeadSelection& sel : selections[static_cast<std::size_t>(l)]) {
        int k = (mode == Mode::train) ? cfg.heads : sel.active_count;
        r.flops_attention += k * 4 * seq_len * seq_len * dh;
        r.memory_attention += k * seq_len * seq_len;
        k_sum += k;
        s_sum += sel.budget;
        ++s_count;
      }
    } else {
      r.flops_attention += batch * cfg.heads * 4 * seq_len * seq_len * dh;
      r.memory_attention += batch * cfg.heads * seq_len * seq_len;
      k_sum += batch * cfg.heads;
    }
    // feed-forward: D -> mD -> D per token
    r.flops_other += batch * seq_len * 2 * d * (cfg.ffn_multiplier * d) * 2;
  }
  r.flops_other += batch * 2 * d * cfg.classes;  // classifier on the pooled vector

  r.flops_total = r.flops_projection + r.flops_attention + r.flops_budget_nets + r.flops_other;
  r.ratio_attention = static_cast<double>(k_sum) /
                      static_cast<double>(cfg.layers * batch * cfg.heads);
  r.mean_budget = s_count > 0 ? s_sum / static_cast<double>(s_count) : 0.0;
  r.carbon_proxy = carbon_proxy(static_cast<double>(r.flops_total), grams_per_flop);
  return r;
}

}  // namespace budgetformer
