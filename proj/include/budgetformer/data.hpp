#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "budgetformer/rng.hpp"
#include "budgetformer/tensor.hpp"

namespace budgetformer {

enum class Tier { none, simple, medium, hard };

std::string tier_name(Tier t);

struct ClassifiedExample {
  std::vector<std::int64_t> token_ids;
  std::vector<std::uint8_t> pad_mask;  // 1 = real token
  std::int64_t label = 0;
  Tier tier = Tier::none;
};

struct Vocabulary {
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;

  std::unordered_map<std::string, std::int64_t> token_to_id;
  std::vector<std::string> id_to_token;  // dense, id_to_token[0] == "<pad>"

  std::int64_t size() const { return static_cast<std::int64_t>(id_to_token.size()); }
  std::int64_t id_of(const std::string& token) const;  // kUnk when absent
};

// lowercased alphanumeric runs; everything else is a separator
std::vector<std::string> tokenize(const std::string& text);

// most frequent max_size-2 tokens after the reserved ids; frequency ties
// break toward the lexicographically smaller token
Vocabulary build_vocab(const std::vector<std::string>& corpus, std::int64_t max_size);

std::vector<std::int64_t> encode(const std::string& text, const Vocabulary& vocab);

struct LoadStats {
  std::int64_t lines = 0;
  std::int64_t malformed = 0;
  std::int64_t truncated = 0;
};

// One JSON object per line with "text" (string) and "label" (non-negative
// integer). Malformed lines are skipped and counted; more than 10% malformed
// is an error. Over-length inputs truncate to max_len.
std::vector<ClassifiedExample> load_jsonl(const std::string& path, const Vocabulary& vocab,
                                          std::int64_t max_len, LoadStats* stats = nullptr);

struct SyntheticSpec {
  std::string task = "keyword";  // "keyword" or "composition"
  int classes = 4;
  int distractor_words = 50;
};

struct SyntheticData {
  Vocabulary vocab;
  std::vector<ClassifiedExample> examples;
};

// Deterministic generator. Tiers cycle simple/medium/hard with lengths
// ~U[6,10], U[14,18], U[26,32]. keyword: one marker token decides the label.
// composition: 1/2/3 markers by tier; label = sum of marker indices mod C.
SyntheticData make_synthetic(const SyntheticSpec& spec, std::int64_t size, std::uint64_t seed);

struct Batch {
  std::vector<std::int64_t> token_ids;  // row-major [batch, seq_len]
  Tensor pad_mask;                      // [batch, seq_len]
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> example_ids;  // indices into the source list
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
};

class Batcher {
 public:
  Batcher(std::vector<ClassifiedExample> examples, std::int64_t batch_size,
          std::uint64_t seed, bool shuffle);

  // all batches for one epoch, padded per batch to the longest member
  std::vector<Batch> epoch(std::int64_t epoch_index) const;
  std::int64_t batches_per_epoch() const;
  std::int64_t size() const { return static_cast<std::int64_t>(examples_.size()); }
  const std::vector<ClassifiedExample>& examples() const { return examples_; }

 private:
  std::vector<ClassifiedExample> examples_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace budgetformer
