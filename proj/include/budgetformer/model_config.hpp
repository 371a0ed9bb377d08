#pragma once

#include <cstdint>

namespace budgetformer {

enum class AttentionKind { standard, budgeted };

struct ModelConfig {
  std::int64_t vocab_size = 256;
  std::int64_t max_seq_len = 64;
  int model_dim = 32;
  int heads = 4;
  int layers = 2;
  int classes = 4;
  AttentionKind attention_kind = AttentionKind::budgeted;
  int ffn_multiplier = 4;
  double dropout_rate = 0.1;

  void validate() const;
};

}  // namespace budgetformer
