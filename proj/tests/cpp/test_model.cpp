#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "budgetformer/errors.hpp"
#include "budgetformer/model.hpp"
#include "budgetformer/objective.hpp"
#include "fd_check.hpp"

using namespace budgetformer;

namespace {

ModelConfig small_config(AttentionKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 24;
  cfg.max_seq_len = 12;
  cfg.model_dim = 16;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.classes = 3;
  cfg.attention_kind = kind;
  return cfg;
}

struct TinyBatch {
  std::vector<std::int64_t> ids;
  Tensor mask;
};

TinyBatch tiny_batch(std::int64_t b, std::int64_t n, std::int64_t vocab, std::uint64_t seed,
                     std::int64_t pad_tail = 0) {
  Rng rng(seed);
  TinyBatch batch;
  batch.ids.resize(static_cast<std::size_t>(b * n), 0);
  batch.mask = Tensor::zeros({b, n});
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t j = 0; j < n; ++j) {
      bool real = j < n - pad_tail;
      batch.ids[static_cast<std::size_t>(bi * n + j)] = real ? 2 + rng.below(vocab - 2) : 0;
      batch.mask.data()[bi * n + j] = real ? 1.0 : 0.0;
    }
  }
  return batch;
}

}  // namespace

TEST_CASE("construction is deterministic") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model a(cfg, 17);
  Model b(cfg, 17);
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& [name_a, t_a] = a.parameters()[i];
    const auto& [name_b, t_b] = b.parameters()[i];
    CHECK(name_a == name_b);
    REQUIRE(t_a.size() == t_b.size());
    for (std::int64_t j = 0; j < t_a.size(); ++j) CHECK(t_a.at(j) == t_b.at(j));
  }
  Model c(cfg, 18);
  bool differs = false;
  for (std::int64_t j = 0; j < a.parameter("embed.token").size(); ++j) {
    differs = differs || (a.parameter("embed.token").at(j) != c.parameter("embed.token").at(j));
  }
  CHECK(differs);
}

TEST_CASE("budgeted parameter count exceeds standard by the budget-net sizes") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  ModelConfig std_cfg = cfg;
  std_cfg.attention_kind = AttentionKind::standard;
  Model budgeted(cfg, 5);
  Model standard(std_cfg, 5);
  std::int64_t d = cfg.model_dim, h = cfg.heads, l = cfg.layers;
  std::int64_t expected = l * (d * d + d + d + 1 + d * h + h);
  CHECK(budgeted.parameter_count() - standard.parameter_count() == expected);
}

TEST_CASE("single-head budgeted model runs") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  cfg.heads = 1;
  Model m(cfg, 3);
  auto batch = tiny_batch(2, 6, cfg.vocab_size, 1);
  ForwardOptions opts;
  auto res = m.forward(batch.ids, batch.mask, opts);
  CHECK(res.logits.shape() == Shape{2, 3});
  CHECK(res.selections.size() == 2);
  for (const auto& layer : res.selections) {
    for (const auto& sel : layer) CHECK(sel.active_count == 1);
  }
}

TEST_CASE("logits shape and selection ranges") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 9);
  for (std::int64_t b : {1, 3}) {
    for (std::int64_t n : {2, 8, 12}) {
      auto batch = tiny_batch(b, n, cfg.vocab_size, static_cast<std::uint64_t>(b * 100 + n));
      ForwardOptions opts;
      auto res = m.forward(batch.ids, batch.mask, opts);
      CHECK(res.logits.shape() == Shape{b, static_cast<std::int64_t>(cfg.classes)});
      REQUIRE(static_cast<int>(res.selections.size()) == cfg.layers);
      for (const auto& layer : res.selections) {
        REQUIRE(static_cast<std::int64_t>(layer.size()) == b);
        for (const auto& sel : layer) {
          CHECK(sel.budget > 0.0);
          CHECK(sel.budget < 1.0);
        }
      }
      for (std::int64_t i = 0; i < res.logits.size(); ++i) {
        CHECK(std::isfinite(res.logits.at(i)));
      }
    }
  }
}

TEST_CASE("standard model returns no selections") {
  Model m(small_config(AttentionKind::standard), 2);
  auto batch = tiny_batch(2, 5, 24, 3);
  auto res = m.forward(batch.ids, batch.mask, ForwardOptions{});
  CHECK(res.selections.empty());
}

TEST_CASE("appending padding never changes the logits") {
  for (AttentionKind kind : {AttentionKind::standard, AttentionKind::budgeted}) {
    ModelConfig cfg = small_config(kind);
    Model m(cfg, 21);
    auto base = tiny_batch(2, 5, cfg.vocab_size, 77);
    ForwardOptions opts;
    auto plain = m.forward(base.ids, base.mask, opts);

    std::int64_t extra = 4;
    std::vector<std::int64_t> padded_ids;
    Tensor padded_mask = Tensor::zeros({2, 5 + extra});
    for (std::int64_t bi = 0; bi < 2; ++bi) {
      for (std::int64_t j = 0; j < 5; ++j) {
        padded_ids.push_back(base.ids[static_cast<std::size_t>(bi * 5 + j)]);
        padded_mask.data()[bi * (5 + extra) + j] = 1.0;
      }
      for (std::int64_t j = 0; j < extra; ++j) padded_ids.push_back(0);
    }
    auto padded = m.forward(padded_ids, padded_mask, opts);
    for (std::int64_t i = 0; i < plain.logits.size(); ++i) {
      CHECK(plain.logits.at(i) == doctest::Approx(padded.logits.at(i)).epsilon(1e-9));
    }
  }
}

TEST_CASE("budgeted collapses to standard when every head weight is one") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  cfg.dropout_rate = 0.0;
  Model budgeted(cfg, 31);
  ModelConfig std_cfg = cfg;
  std_cfg.attention_kind = AttentionKind::standard;
  Model standard(std_cfg, 32);

  // share every weight the two variants have in common
  for (const auto& [name, src] : standard.parameters()) {
    Tensor dst = budgeted.parameter(name);
    for (std::int64_t i = 0; i < src.size(); ++i) dst.data()[i] = src.at(i);
  }
  // rig the budget nets: s = sigmoid(40) rounds to 1, gating logits all zero
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "block" + std::to_string(l) + ".budget.";
    for (const char* net : {"f1_w", "f1_b", "f2_w", "g_w", "g_b"}) {
      Tensor t = budgeted.parameter(p + net);
      std::fill(t.data(), t.data() + t.size(), 0.0);
    }
    budgeted.parameter(p + "f2_b").data()[0] = 40.0;
  }

  auto batch = tiny_batch(2, 7, cfg.vocab_size, 13, 2);
  ForwardOptions opts;
  opts.force_k = cfg.heads;
  auto from_budgeted = budgeted.forward(batch.ids, batch.mask, opts);
  auto from_standard = standard.forward(batch.ids, batch.mask, ForwardOptions{});
  for (std::int64_t i = 0; i < from_standard.logits.size(); ++i) {
    CHECK(from_budgeted.logits.at(i) ==
          doctest::Approx(from_standard.logits.at(i)).epsilon(1e-12));
  }
  for (const auto& layer : from_budgeted.selections) {
    for (const auto& sel : layer) {
      CHECK(sel.budget == 1.0);
      for (double w : sel.weights) CHECK(w == 1.0);
    }
  }
}

TEST_CASE("inference is deterministic and repeatable") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 8);
  auto batch = tiny_batch(3, 9, cfg.vocab_size, 55, 3);
  ForwardOptions opts;
  opts.step = 40;
  opts.schedule.total_steps = 100;
  auto a = m.forward(batch.ids, batch.mask, opts);
  auto b = m.forward(batch.ids, batch.mask, opts);
  for (std::int64_t i = 0; i < a.logits.size(); ++i) CHECK(a.logits.at(i) == b.logits.at(i));
  for (std::size_t l = 0; l < a.selections.size(); ++l) {
    for (std::size_t e = 0; e < a.selections[l].size(); ++e) {
      CHECK(a.selections[l][e].active == b.selections[l][e].active);
      CHECK(a.selections[l][e].budget == b.selections[l][e].budget);
    }
  }
}

TEST_CASE("oversized sequences truncate with a counter") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 4);
  auto batch = tiny_batch(2, cfg.max_seq_len + 5, cfg.vocab_size, 9);
  auto res = m.forward(batch.ids, batch.mask, ForwardOptions{});
  CHECK(res.logits.shape() == Shape{2, static_cast<std::int64_t>(cfg.classes)});
  CHECK(res.truncated == 2 * 5);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 4);
  auto batch = tiny_batch(1, 4, cfg.vocab_size, 2);
  batch.ids[2] = cfg.vocab_size;
  CHECK_THROWS_AS(m.forward(batch.ids, batch.mask, ForwardOptions{}), DataError);
  CHECK_THROWS_AS(m.parameter("no.such.name"), ParameterError);
}

TEST_CASE("end-to-end gradients match finite differences") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 101);
  auto batch = tiny_batch(2, 6, cfg.vocab_size, 3, 1);
  std::vector<std::int64_t> labels{0, 2};

  ForwardOptions opts;
  opts.mode = Mode::train;
  opts.step = 10;
  opts.schedule.total_steps = 50;
  opts.run_seed = 555;

  auto build_loss = [&] {
    auto res = m.forward(batch.ids, batch.mask, opts);
    return cross_entropy(res.logits, labels);
  };

  std::vector<Tensor> leaves{
      m.parameter("embed.token"),        m.parameter("embed.pos"),
      m.parameter("block0.ln1.gain"),    m.parameter("block0.attn.w_q"),
      m.parameter("block0.attn.w_o"),    m.parameter("block0.budget.f1_w"),
      m.parameter("block0.budget.f2_b"), m.parameter("block0.budget.g_w"),
      m.parameter("block0.ffn.w1"),      m.parameter("block1.attn.w_v"),
      m.parameter("block1.budget.g_b"),  m.parameter("block1.ffn.w2"),
      m.parameter("classifier.w"),       m.parameter("classifier.b"),
  };
  Rng sample_rng(7);
  auto rep = fdcheck::check_gradients_sampled(leaves, build_loss, 3, sample_rng, 1e-5);
  CHECK(rep.checked >= 20);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("checkpoints round-trip bitwise") {
  ModelConfig cfg = small_config(AttentionKind::budgeted);
  Model m(cfg, 77);
  // make the weights less uniform than the init so the test means something
  Rng rng(1);
  for (const auto& [name, t] : m.parameters()) {
    Tensor mut = t;
    for (std::int64_t i = 0; i < mut.size(); ++i) mut.data()[i] += rng.normal() * 0.1;
  }
  TrainProgress progress{123, 400};
  std::string path = "/tmp/bf_ckpt_test.bin";
  save_checkpoint(m, progress, path);

  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.progress.step == 123);
  CHECK(loaded.progress.total_steps == 400);
  CHECK(loaded.model.config().vocab_size == cfg.vocab_size);
  CHECK(loaded.model.config().attention_kind == AttentionKind::budgeted);
  CHECK(loaded.model.config().dropout_rate == cfg.dropout_rate);
  REQUIRE(loaded.model.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& [name, original] = m.parameters()[i];
    const auto& [got_name, got] = loaded.model.parameters()[i];
    CHECK(name == got_name);
    REQUIRE(got.shape() == original.shape());
    for (std::int64_t j = 0; j < original.size(); ++j) CHECK(got.at(j) == original.at(j));
  }

  // identical forwards after reload
  auto batch = tiny_batch(2, 8, cfg.vocab_size, 4, 2);
  ForwardOptions opts;
  auto before = m.forward(batch.ids, batch.mask, opts);
  auto after = loaded.model.forward(batch.ids, batch.mask, opts);
  for (std::int64_t i = 0; i < before.logits.size(); ++i) {
    CHECK(before.logits.at(i) == after.logits.at(i));
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loading rejects damaged files") {
  CHECK_THROWS_AS(load_checkpoint("/tmp/bf_no_such_ckpt.bin"), IoError);

  std::string bad_magic = "/tmp/bf_bad_magic.bin";
  {
    std::ofstream out(bad_magic, std::ios::binary);
    out << "NOTACKPT and some bytes";
  }
  CHECK_THROWS_AS(load_checkpoint(bad_magic), IoError);
  std::remove(bad_magic.c_str());

  // valid header, truncated body
  ModelConfig cfg = small_config(AttentionKind::standard);
  Model m(cfg, 1);
  std::string path = "/tmp/bf_truncated.bin";
  save_checkpoint(m, TrainProgress{}, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() / 2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS(load_checkpoint(path));
  std::remove(path.c_str());
}
