#include "budgetformer/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "budgetformer/errors.hpp"

namespace budgetformer {

std::string tier_name(Tier t) {
  switch (t) {
    case Tier::simple: return "simple";
    case Tier::medium: return "medium";
    case Tier::hard: return "hard";
    default: return "none";
  }
}

std::int64_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

Vocabulary reserved_vocab() {
  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>"};
  v.token_to_id = {{"<pad>", Vocabulary::kPad}, {"<unk>", Vocabulary::kUnk}};
  return v;
}

void push_token(Vocabulary& v, const std::string& token) {
  v.token_to_id.emplace(token, v.size());
  v.id_to_token.push_back(token);
}

}  // namespace

Vocabulary build_vocab(const std::vector<std::string>& corpus, std::int64_t max_size) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (max_size < 2) throw ParameterError("build_vocab: max_size must fit PAD and UNK");
  std::map<std::string, std::int64_t> counts;  // ordered map gives the lexicographic tie-break
  for (const std::string& text : corpus) {
    for (const std::string& tok : tokenize(text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v = reserved_vocab();
  std::int64_t keep = max_size - 2;
  for (const auto& [tok, cnt] : ranked) {
    if (static_cast<std::int64_t>(v.size()) - 2 >= keep) break;
    push_token(v, tok);
  }
  return v;
}

std::vector<std::int64_t> encode(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::int64_t> ids;
  for (const std::string& tok : tokenize(text)) ids.push_back(vocab.id_of(tok));
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

std::vector<ClassifiedExample> load_jsonl(const std::string& path, const Vocabulary& vocab,
                                          std::int64_t max_len, LoadStats* stats) {
  if (max_len < 1) throw ParameterError("load_jsonl: max_len must be positive");
  std::ifstream in(path);
  if (!in) throw IoError("load_jsonl: cannot open " + path);
  LoadStats local;
  std::vector<ClassifiedExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++local.lines;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("text") ||
        !obj.contains("label") || !obj["text"].is_string() ||
        !obj["label"].is_number_integer() || obj["label"].get<std::int64_t>() < 0) {
      ++local.malformed;
      std::cerr << "[data] skipping malformed line " << local.lines << " of " << path << "\n";
      continue;
    }
    ClassifiedExample ex;
    ex.token_ids = encode(obj["text"].get<std::string>(), vocab);
    if (static_cast<std::int64_t>(ex.token_ids.size()) > max_len) {
      ex.token_ids.resize(static_cast<std::size_t>(max_len));
      ++local.truncated;
    }
    ex.pad_mask.assign(ex.token_ids.size(), 1);
    ex.label = obj["label"].get<std::int64_t>();
    out.push_back(std::move(ex));
  }
  if (local.lines > 0 && 10 * local.malformed > local.lines) {
    throw DataError("load_jsonl: " + std::to_string(local.malformed) + " of " +
                    std::to_string(local.lines) + " lines malformed in " + path);
  }
  if (stats) *stats = local;
  return out;
}

namespace {

std::string marker_token(int c) { return std::string(3, static_cast<char>('a' + c)); }

std::pair<std::int64_t, std::int64_t> tier_length_range(Tier t) {
  switch (t) {
    case Tier::simple: return {6, 10};
    case Tier::medium: return {14, 18};
    default: return {26, 32};
  }
}

int tier_depth(Tier t) {
  switch (t) {
    case Tier::simple: return 1;
    case Tier::medium: return 2;
    default: return 3;
  }
}

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec, std::int64_t size, std::uint64_t seed) {
  if (spec.task != "keyword" && spec.task != "composition") {
    throw ParameterError("make_synthetic: unknown task '" + spec.task + "'");
  }
  if (spec.classes < 2 || spec.classes > 26) {
    throw ParameterError("make_synthetic: classes must lie in [2, 26]");
  }
  if (size < 1) throw ParameterError("make_synthetic: size must be positive");

  SyntheticData out;
  out.vocab = reserved_vocab();
  for (int c = 0; c < spec.classes; ++c) push_token(out.vocab, marker_token(c));
  std::vector<std::int64_t> distractor_ids;
  for (int i = 0; i < spec.distractor_words; ++i) {
    std::string word = "w" + std::to_string(i);
    push_token(out.vocab, word);
    distractor_ids.push_back(out.vocab.size() - 1);
  }

  Rng rng = run_stream(seed, StreamTag::data);
  const Tier tiers[3] = {Tier::simple, Tier::medium, Tier::hard};
  for (std::int64_t i = 0; i < size; ++i) {
    Tier tier = tiers[i % 3];
    auto [lo, hi] = tier_length_range(tier);
    std::int64_t n = lo + rng.below(hi - lo + 1);

    ClassifiedExample ex;
    ex.tier = tier;
    ex.token_ids.assign(static_cast<std::size_t>(n), 0);
    for (std::int64_t j = 0; j < n; ++j) {
      ex.token_ids[static_cast<std::size_t>(j)] =
          distractor_ids[static_cast<std::size_t>(rng.below(spec.distractor_words))];
    }

    int markers = (spec.task == "keyword") ? 1 : tier_depth(tier);
    // distinct positions for the markers
    std::vector<std::int64_t> positions(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) positions[static_cast<std::size_t>(j)] = j;
    rng.shuffle(positions);

    std::int64_t label_sum = 0;
    for (int m = 0; m < markers; ++m) {
      std::int64_t c = rng.below(spec.classes);
      label_sum += c;
      ex.token_ids[static_cast<std::size_t>(positions[static_cast<std::size_t>(m)])] =
          2 + c;  // marker ids start right after PAD and UNK
    }
    ex.label = label_sum % spec.classes;
    ex.pad_mask.assign(ex.token_ids.size(), 1);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

Batcher::Batcher(std::vector<ClassifiedExample> examples, std::int64_t batch_size,
                 std::uint64_t seed, bool shuffle)
    : examples_(std::move(examples)), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size_ < 1) throw ParameterError("batcher: batch_size must be positive");
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const ClassifiedExample& ex = examples_[i];
    if (ex.token_ids.empty() || ex.token_ids.size() != ex.pad_mask.size()) {
      throw DataError("batcher: example " + std::to_string(i) + " has inconsistent lengths");
    }
  }
}

std::int64_t Batcher::batches_per_epoch() const {
  return (size() + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> Batcher::epoch(std::int64_t epoch_index) const {
  std::vector<std::int64_t> order(examples_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  if (shuffle_) {
    Rng rng = run_stream(seed_, StreamTag::shuffle, static_cast<std::uint64_t>(epoch_index));
    rng.shuffle(order);
  }

  std::vector<Batch> batches;
  for (std::int64_t start = 0; start < size(); start += batch_size_) {
    std::int64_t b = std::min(batch_size_, size() - start);
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < b; ++i) {
      const auto& ex = examples_[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      n = std::max(n, static_cast<std::int64_t>(ex.token_ids.size()));
    }
    Batch out;
    out.batch = b;
    out.seq_len = n;
    out.token_ids.assign(static_cast<std::size_t>(b * n), Vocabulary::kPad);
    out.pad_mask = Tensor::zeros({b, n});
    for (std::int64_t i = 0; i < b; ++i) {
      std::int64_t id = order[static_cast<std::size_t>(start + i)];
      const auto& ex = examples_[static_cast<std::size_t>(id)];
      out.example_ids.push_back(id);
      out.labels.push_back(ex.label);
      for (std::size_t j = 0; j < ex.token_ids.size(); ++j) {
        out.token_ids[static_cast<std::size_t>(i * n) + j] = ex.token_ids[j];
        out.pad_mask.data()[i * n + static_cast<std::int64_t>(j)] = ex.pad_mask[j];
      }
    }
    batches.push_back(std::move(out));
  }
  return batches;
}

}  // namespace budgetformer
