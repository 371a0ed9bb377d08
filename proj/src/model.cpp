#include "budgetformer/model.hpp"

#include <cstring>
#include <fstream>

#include "budgetformer/errors.hpp"
#include "budgetformer/rng.hpp"

namespace budgetformer {

namespace {
constexpr double kInitStddev = 0.02;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = run_stream(seed, StreamTag::init);
  std::int64_t d = cfg_.model_dim;
  std::int64_t ffn = static_cast<std::int64_t>(cfg_.ffn_multiplier) * d;

  token_embed_ = Tensor::randn({cfg_.vocab_size, d}, rng, kInitStddev, true);
  pos_embed_ = Tensor::randn({cfg_.max_seq_len, d}, rng, kInitStddev, true);

  bool budgeted = cfg_.attention_kind == AttentionKind::budgeted;
  for (int l = 0; l < cfg_.layers; ++l) {
    EncoderBlock block;
    block.ln1_gain = Tensor::full({d}, 1.0, true);
    block.ln1_bias = Tensor::zeros({d}, true);
    block.attn = AttentionParams::create(cfg_.model_dim, cfg_.heads, rng);
    if (budgeted) block.budget = BudgetNets::create(cfg_.model_dim, cfg_.heads, rng);
    block.ln2_gain = Tensor::full({d}, 1.0, true);
    block.ln2_bias = Tensor::zeros({d}, true);
    block.ffn_w1 = Tensor::randn({d, ffn}, rng, kInitStddev, true);
    block.ffn_b1 = Tensor::zeros({ffn}, true);
    block.ffn_w2 = Tensor::randn({ffn, d}, rng, kInitStddev, true);
    block.ffn_b2 = Tensor::zeros({d}, true);
    blocks_.push_back(std::move(block));
  }

  classifier_w_ = Tensor::randn({d, static_cast<std::int64_t>(cfg_.classes)}, rng,
                                kInitStddev, true);
  classifier_b_ = Tensor::zeros({static_cast<std::int64_t>(cfg_.classes)}, true);
  register_params();
}

void Model::register_params() {
  params_.clear();
  params_.emplace_back("embed.token", token_embed_);
  params_.emplace_back("embed.pos", pos_embed_);
  bool budgeted = cfg_.attention_kind == AttentionKind::budgeted;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    std::string p = "block" + std::to_string(l) + ".";
    EncoderBlock& blk = blocks_[l];
    params_.emplace_back(p + "ln1.gain", blk.ln1_gain);
    params_.emplace_back(p + "ln1.bias", blk.ln1_bias);
    params_.emplace_back(p + "attn.w_q", blk.attn.w_q);
    params_.emplace_back(p + "attn.w_k", blk.attn.w_k);
    params_.emplace_back(p + "attn.w_v", blk.attn.w_v);
    params_.emplace_back(p + "attn.w_o", blk.attn.w_o);
    if (budgeted) {
      params_.emplace_back(p + "budget.f1_w", blk.budget.f1_w);
      params_.emplace_back(p + "budget.f1_b", blk.budget.f1_b);
      params_.emplace_back(p + "budget.f2_w", blk.budget.f2_w);
      params_.emplace_back(p + "budget.f2_b", blk.budget.f2_b);
      params_.emplace_back(p + "budget.g_w", blk.budget.g_w);
      params_.emplace_back(p + "budget.g_b", blk.budget.g_b);
    }
    params_.emplace_back(p + "ln2.gain", blk.ln2_gain);
    params_.emplace_back(p + "ln2.bias", blk.ln2_bias);
    params_.emplace_back(p + "ffn.w1", blk.ffn_w1);
    params_.emplace_back(p + "ffn.b1", blk.ffn_b1);
    params_.emplace_back(p + "ffn.w2", blk.ffn_w2);
    params_.emplace_back(p + "ffn.b2", blk.ffn_b2);
  }
  params_.emplace_back("classifier.w", classifier_w_);
  params_.emplace_back("classifier.b", classifier_b_);
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ParameterError("model: no parameter named '" + name + "'");
}

std::int64_t Model::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [n, t] : params_) total += t.size();
  return total;
}

ForwardResult Model::forward(const std::vector<std::int64_t>& token_ids,
                             const Tensor& pad_mask, const ForwardOptions& opts) const {
  if (pad_mask.rank() != 2) {
    throw DimensionError("forward: pad_mask must be [B,N], got " +
                         shape_to_string(pad_mask.shape()));
  }
  std::int64_t b = pad_mask.dim(0), n = pad_mask.dim(1);
  if (static_cast<std::int64_t>(token_ids.size()) != b * n) {
    throw DimensionError("forward: got " + std::to_string(token_ids.size()) +
                         " token ids for a " + shape_to_string(pad_mask.shape()) + " mask");
  }
  for (std::int64_t id : token_ids) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw DataError("forward: token id " + std::to_string(id) + " outside vocab of " +
                      std::to_string(cfg_.vocab_size));
    }
  }

  ForwardResult res;
  std::vector<std::int64_t> ids = token_ids;
  Tensor mask = pad_mask;
  if (n > cfg_.max_seq_len) {
    std::int64_t keep = cfg_.max_seq_len;
    std::vector<std::int64_t> cut(static_cast<std::size_t>(b * keep));
    Tensor cut_mask = Tensor::zeros({b, keep});
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t j = 0; j < keep; ++j) {
        cut[static_cast<std::size_t>(bi * keep + j)] =
            ids[static_cast<std::size_t>(bi * n + j)];
        cut_mask.data()[bi * keep + j] = pad_mask.at(bi * n + j);
      }
      for (std::int64_t j = keep; j < n; ++j) {
        if (pad_mask.at(bi * n + j) != 0.0) ++res.truncated;
      }
    }
    ids = std::move(cut);
    mask = cut_mask;
    n = keep;
  }

  bool budgeted = cfg_.attention_kind == AttentionKind::budgeted;
  bool train = opts.mode == Mode::train;
  std::vector<std::int64_t> positions(static_cast<std::size_t>(b * n));
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t j = 0; j < n; ++j) positions[static_cast<std::size_t>(bi * n + j)] = j;

  Tensor x = add(embedding(token_embed_, ids, {b, n}), embedding(pos_embed_, positions, {b, n}));

  if (opts.dumps) opts.dumps->assign(static_cast<std::size_t>(cfg_.layers), AttentionDump{});

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const EncoderBlock& blk = blocks_[l];
    Tensor normed = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
    Tensor attn_out;
    if (budgeted) {
      BudgetedAttentionOptions aopts;
      aopts.mode = opts.mode;
      aopts.step = opts.step;
      aopts.schedule = opts.schedule;
      aopts.noise = NoiseKey{opts.run_seed, opts.step, static_cast<int>(l)};
      aopts.force_k = opts.force_k;
      aopts.allow_skip = opts.allow_skip;
      aopts.pool_input = &x;
      aopts.fixed_budget = opts.fixed_budget;
      aopts.random_gating = opts.random_gating;
      if (opts.budget_rows) {
        if (opts.budget_rows->size() != blocks_.size()) {
          throw DimensionError("forward: " + std::to_string(opts.budget_rows->size()) +
                               " budget-row layers for " + std::to_string(blocks_.size()) +
                               " blocks");
        }
        aopts.budget_rows = &(*opts.budget_rows)[l];
      }
      if (opts.dumps) aopts.dump = &(*opts.dumps)[l];
      BudgetedAttentionResult att = budgeted_attention(normed, blk.attn, blk.budget, mask, aopts);
      attn_out = att.output;
      res.selections.push_back(std::move(att.selections));
      res.budgets.push_back(att.budget);
      res.head_probs.push_back(att.probs);
    } else {
      attn_out = standard_mha(normed, blk.attn, mask);
    }
    if (train && cfg_.dropout_rate > 0.0) {
      Rng drop = example_stream(opts.run_seed, opts.step, static_cast<int>(l), 0,
                                StreamTag::dropout);
      attn_out = dropout(attn_out, cfg_.dropout_rate, drop);
    }
    x = add(x, attn_out);

    Tensor ffn_in = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
    Tensor ffn_out = linear(gelu(linear(ffn_in, blk.ffn_w1, blk.ffn_b1)), blk.ffn_w2, blk.ffn_b2);
    if (train && cfg_.dropout_rate > 0.0) {
      Rng drop = example_stream(opts.run_seed, opts.step, static_cast<int>(l), 1,
                                StreamTag::dropout);
      ffn_out = dropout(ffn_out, cfg_.dropout_rate, drop);
    }
    x = add(x, ffn_out);
  }

  Tensor pooled = masked_mean_pool(x, mask);
  res.logits = linear(pooled, classifier_w_, classifier_b_);
  return res;
}

// ---- checkpointing ----

namespace {

constexpr char kMagic[8] = {'B', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::istream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainProgress& progress,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));

  const ModelConfig& cfg = model.config();
  write_i64(out, cfg.vocab_size);
  write_i64(out, cfg.max_seq_len);
  write_i64(out, cfg.model_dim);
  write_i64(out, cfg.heads);
  write_i64(out, cfg.layers);
  write_i64(out, cfg.classes);
  write_i64(out, cfg.attention_kind == AttentionKind::budgeted ? 1 : 0);
  write_i64(out, cfg.ffn_multiplier);
  write_f64(out, cfg.dropout_rate);
  write_i64(out, progress.step);
  write_i64(out, progress.total_steps);

  write_i64(out, static_cast<std::int64_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    write_i64(out, static_cast<std::int64_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_i64(out, tensor.rank());
    for (std::int64_t ext : tensor.shape()) write_i64(out, ext);
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!out) throw IoError("save_checkpoint: write to " + path + " failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  }

  ModelConfig cfg;
  cfg.vocab_size = read_i64(in);
  cfg.max_seq_len = read_i64(in);
  cfg.model_dim = static_cast<int>(read_i64(in));
  cfg.heads = static_cast<int>(read_i64(in));
  cfg.layers = static_cast<int>(read_i64(in));
  cfg.classes = static_cast<int>(read_i64(in));
  cfg.attention_kind = read_i64(in) == 1 ? AttentionKind::budgeted : AttentionKind::standard;
  cfg.ffn_multiplier = static_cast<int>(read_i64(in));
  cfg.dropout_rate = read_f64(in);
  TrainProgress progress;
  progress.step = read_i64(in);
  progress.total_steps = read_i64(in);
  if (!in) throw IoError("load_checkpoint: truncated header in " + path);

  LoadedCheckpoint loaded{Model(cfg, 0), progress};
  std::int64_t count = read_i64(in);
  if (count != static_cast<std::int64_t>(loaded.model.parameters().size())) {
    throw DataError("load_checkpoint: expected " +
                    std::to_string(loaded.model.parameters().size()) + " parameters, file has " +
                    std::to_string(count));
  }
  for (const auto& [name, tensor] : loaded.model.parameters()) {
    std::int64_t name_len = read_i64(in);
    std::string got(static_cast<std::size_t>(name_len), '\0');
    in.read(got.data(), name_len);
    if (got != name) {
      throw DataError("load_checkpoint: parameter '" + got + "' where '" + name +
                      "' was expected");
    }
    std::int64_t rank = read_i64(in);
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& ext : shape) ext = read_i64(in);
    if (shape != tensor.shape()) {
      throw DataError("load_checkpoint: shape mismatch for '" + name + "'");
    }
    Tensor target = tensor;  // shallow handle onto the model's storage
    in.read(reinterpret_cast<char*>(target.data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!in) throw IoError("load_checkpoint: truncated data in " + path);
  }
  return loaded;
}

}  // namespace budgetformer
