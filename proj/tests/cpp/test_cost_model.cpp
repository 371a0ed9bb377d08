#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "budgetformer/cost_model.hpp"
#include "budgetformer/errors.hpp"
#include "oracles.hpp"

using namespace budgetformer;

namespace {

std::vector<std::vector<HeadSelection>> fixed_selections(int layers, int batch, int heads,
                                                         int k, double s) {
  HeadSelection sel;
  sel.budget = s;
  sel.active_count = k;
  sel.active.assign(static_cast<std::size_t>(heads), 0);
  for (int i = 0; i < k; ++i) sel.active[static_cast<std::size_t>(i)] = 1;
  sel.probs.assign(static_cast<std::size_t>(heads), 1.0 / heads);
  sel.scores.assign(static_cast<std::size_t>(heads), 0.0);
  sel.weights.assign(static_cast<std::size_t>(heads), s);
  return std::vector<std::vector<HeadSelection>>(
      static_cast<std::size_t>(layers),
      std::vector<HeadSelection>(static_cast<std::size_t>(batch), sel));
}

}  // namespace

TEST_CASE("attention flops frozen example") {
  auto f = attention_flops(1, 16, 32, 4, 4);
  CHECK(f.projection == 131072);
  CHECK(f.attention == 32768);
}

TEST_CASE("attention flops full-head case and scaling") {
  auto base = attention_flops(2, 8, 32, 4, 4);
  CHECK(base.attention == 2 * 4 * 4 * 64 * 8);  // B*H*4*N^2*dh

  auto twice_n = attention_flops(2, 16, 32, 4, 4);
  CHECK(twice_n.attention == 4 * base.attention);
  CHECK(twice_n.projection == 2 * base.projection);

  CHECK_THROWS_AS(attention_flops(1, 8, 32, 4, 0), ParameterError);
  CHECK_THROWS_AS(attention_flops(1, 8, 32, 4, 5), ParameterError);
  CHECK_THROWS_AS(attention_flops(1, 8, 30, 4, 2), ParameterError);
}

TEST_CASE("budget net flops frozen example") {
  CHECK(budget_net_flops(1, 32, 4) == 2368);
  CHECK(budget_net_flops(1, 32, 4) == budget_net_flops(1, 32, 4));  // no N anywhere
  CHECK(budget_net_flops(3, 32, 4) == 3 * 2368);
}

TEST_CASE("inference ratio") {
  CHECK(inference_ratio({8, 8, 8}, 8) == 1.0);
  CHECK(inference_ratio({2, 2, 2, 2}, 8) == 0.25);
  CHECK(inference_ratio({1, 2, 4, 7}, 8) == 0.4375);
  CHECK_THROWS_AS(inference_ratio({0, 2}, 8), ParameterError);
  CHECK_THROWS_AS(inference_ratio({9}, 8), ParameterError);
}

TEST_CASE("attention memory frozen example") {
  CHECK(attention_memory(2, 16, 3) == 1536);
  CHECK(attention_memory(1, 8, 4) == 4 * 64);
}

TEST_CASE("carbon proxy") {
  CHECK(carbon_proxy(1e9, 0.0) == 0.0);
  CHECK(carbon_proxy(1e9, 2e-12) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(carbon_proxy(5e8, 2e-12) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK_THROWS_AS(carbon_proxy(1.0, -1e-9), ParameterError);
}

TEST_CASE("analytic counts equal the instrumented counter on the full grid") {
  for (std::int64_t b : {1, 2}) {
    for (std::int64_t n : {4, 16}) {
      for (int d : {16, 32}) {
        for (int h : {2, 4}) {
          std::int64_t dh = d / h;
          for (int k = 1; k <= h; ++k) {
            auto f = attention_flops(b, n, d, h, k);
            CHECK(f.projection == oracles::count_projection_flops(b, n, d));
            CHECK(f.attention == oracles::count_attention_flops(b, n, dh, k));
            CHECK(budget_net_flops(b, d, h) == oracles::count_budget_net_flops(b, d, h));
            CHECK(attention_memory(b, n, k) == oracles::count_attention_memory(b, n, k));

            // ratio vs full heads is exactly k/H, in both flops and memory
            auto full = attention_flops(b, n, d, h, h);
            double flop_ratio = static_cast<double>(f.attention) /
                                static_cast<double>(full.attention);
            double mem_ratio = static_cast<double>(attention_memory(b, n, k)) /
                               static_cast<double>(attention_memory(b, n, h));
            double exact = static_cast<double>(k) / static_cast<double>(h);
            CHECK(flop_ratio == exact);
            CHECK(mem_ratio == exact);
          }
        }
      }
    }
  }
}

TEST_CASE("model cost: training budgeted total = standard total + budget nets") {
  ModelConfig cfg;
  cfg.model_dim = 32;
  cfg.heads = 4;
  cfg.layers = 3;
  cfg.classes = 5;
  cfg.attention_kind = AttentionKind::budgeted;
  auto sels = fixed_selections(3, 2, 4, 2, 0.6);
  CostReport train = model_cost(cfg, 2, 12, sels, Mode::train);

  ModelConfig std_cfg = cfg;
  std_cfg.attention_kind = AttentionKind::standard;
  CostReport plain = model_cost(std_cfg, 2, 12, {}, Mode::inference);

  CHECK(train.flops_total == plain.flops_total + train.flops_budget_nets);
  CHECK(train.flops_budget_nets == 3 * budget_net_flops(2, 32, 4));
  CHECK(train.flops_attention == plain.flops_attention);
  CHECK(train.ratio_attention == 1.0);
  CHECK(train.mean_budget == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(plain.flops_budget_nets == 0);
}

TEST_CASE("model cost: inference with all heads active matches standard attention terms") {
  ModelConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.attention_kind = AttentionKind::budgeted;
  auto sels = fixed_selections(2, 3, 2, 2, 0.95);
  CostReport inf = model_cost(cfg, 3, 10, sels, Mode::inference);

  ModelConfig std_cfg = cfg;
  std_cfg.attention_kind = AttentionKind::standard;
  CostReport plain = model_cost(std_cfg, 3, 10, {}, Mode::inference);

  CHECK(inf.flops_attention == plain.flops_attention);
  CHECK(inf.memory_attention == plain.memory_attention);
  CHECK(inf.ratio_attention == 1.0);
}

TEST_CASE("model cost matches a fully instrumented counter") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    ModelConfig cfg;
    cfg.heads = static_cast<int>(1 + rng.below(4));
    cfg.model_dim = cfg.heads * static_cast<int>(2 + rng.below(6));
    cfg.layers = static_cast<int>(1 + rng.below(3));
    cfg.classes = static_cast<int>(2 + rng.below(4));
    cfg.ffn_multiplier = static_cast<int>(1 + rng.below(4));
    cfg.attention_kind = (trial % 3 == 0) ? AttentionKind::standard : AttentionKind::budgeted;
    std::int64_t b = 1 + rng.below(3);
    std::int64_t n = 2 + rng.below(10);
    Mode mode = (trial % 2 == 0) ? Mode::inference : Mode::train;

    std::vector<std::vector<HeadSelection>> sels;
    if (cfg.attention_kind == AttentionKind::budgeted) {
      for (int l = 0; l < cfg.layers; ++l) {
        std::vector<HeadSelection> row;
        for (std::int64_t bi = 0; bi < b; ++bi) {
          auto one = fixed_selections(1, 1, cfg.heads,
                                      static_cast<int>(1 + rng.below(cfg.heads)),
                                      0.1 + 0.8 * rng.uniform());
          row.push_back(one[0][0]);
        }
        sels.push_back(row);
      }
    }
    CostReport got = model_cost(cfg, b, n, sels, mode);

    long long proj = 0, attn = 0, nets = 0, other = 0, mem = 0;
    std::int64_t dh = cfg.model_dim / cfg.heads;
    for (int l = 0; l < cfg.layers; ++l) {
      proj += oracles::count_projection_flops(b, n, cfg.model_dim);
      if (cfg.attention_kind == AttentionKind::budgeted) {
        nets += oracles::count_budget_net_flops(b, cfg.model_dim, cfg.heads);
        for (std::int64_t bi = 0; bi < b; ++bi) {
          int k = (mode == Mode::train)
                      ? cfg.heads
                      : sels[static_cast<std::size_t>(l)][static_cast<std::size_t>(bi)]
                            .active_count;
          attn += oracles::count_attention_flops(1, n, dh, k);
          mem += oracles::count_attention_memory(1, n, k);
        }
      } else {
        attn += oracles::count_attention_flops(b, n, dh, cfg.heads);
        mem += oracles::count_attention_memory(b, n, cfg.heads);
      }
      other += oracles::count_ffn_flops(b, n, cfg.model_dim, cfg.ffn_multiplier);
    }
    other += oracles::count_classifier_flops(b, cfg.model_dim, cfg.classes);

    CHECK(got.flops_projection == proj);
    CHECK(got.flops_attention == attn);
    CHECK(got.flops_budget_nets == nets);
    CHECK(got.flops_other == other);
    CHECK(got.flops_total == proj + attn + nets + other);
    CHECK(got.memory_attention == mem);
  }
}

TEST_CASE("model cost ratio uses realized k and equals the flop ratio") {
  ModelConfig cfg;
  cfg.model_dim = 32;
  cfg.heads = 8;
  cfg.layers = 4;
  cfg.attention_kind = AttentionKind::budgeted;
  // one layer per k in {1, 2, 4, 7}
  std::vector<std::vector<HeadSelection>> sels;
  for (int k : {1, 2, 4, 7}) sels.push_back(fixed_selections(1, 1, 8, k, 0.4)[0]);
  CostReport r = model_cost(cfg, 1, 16, sels, Mode::inference);
  CHECK(r.ratio_attention == 0.4375);

  ModelConfig std_cfg = cfg;
  std_cfg.attention_kind = AttentionKind::standard;
  CostReport plain = model_cost(std_cfg, 1, 16, {}, Mode::inference);
  double flop_ratio = static_cast<double>(r.flops_attention) /
                      static_cast<double>(plain.flops_attention);
  double mem_ratio = static_cast<double>(r.memory_attention) /
                     static_cast<double>(plain.memory_attention);
  CHECK(flop_ratio == r.ratio_attention);
  CHECK(mem_ratio == r.ratio_attention);
  CHECK(r.mean_budget == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("model cost carbon scales with grams_per_flop") {
  ModelConfig cfg;
  cfg.attention_kind = AttentionKind::standard;
  CostReport zero = model_cost(cfg, 1, 8, {}, Mode::inference);
  CHECK(zero.carbon_proxy == 0.0);
  CostReport priced = model_cost(cfg, 1, 8, {}, Mode::inference, 3e-12);
  CHECK(priced.carbon_proxy ==
        doctest::Approx(3e-12 * static_cast<double>(priced.flops_total)).epsilon(1e-15));
}

TEST_CASE("model cost contract errors") {
  ModelConfig cfg;
  cfg.attention_kind = AttentionKind::budgeted;
  cfg.layers = 2;
  CHECK_THROWS_AS(model_cost(cfg, 1, 8, {}, Mode::inference), ContractError);
  auto short_sels = fixed_selections(2, 1, cfg.heads, 1, 0.2);
  CHECK_THROWS_AS(model_cost(cfg, 2, 8, short_sels, Mode::inference), ContractError);

  ModelConfig bad = cfg;
  bad.model_dim = 30;
  CHECK_THROWS_AS(model_cost(bad, 1, 8, short_sels, Mode::inference), ParameterError);
}

TEST_CASE("config validation") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  ModelConfig bad = cfg;
  bad.classes = 1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = cfg;
  bad.layers = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = cfg;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}
