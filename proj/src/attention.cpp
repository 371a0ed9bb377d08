#include "budgetformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "budgetformer/errors.hpp"

namespace budgetformer {

namespace {
// additive key bias: 0 on active keys, a huge negative number on padding so
// softmax drives those columns to exact zero
constexpr double kMaskedOut = -1e30;
}  // namespace

AttentionParams AttentionParams::create(int model_dim, int heads, Rng& rng) {
  if (heads < 1 || model_dim < 1 || model_dim % heads != 0) {
    throw ParameterError("AttentionParams: model_dim " + std::to_string(model_dim) +
                         " not divisible into " + std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.head_dim = model_dim / heads;
  Shape sq{model_dim, model_dim};
  p.w_q = Tensor::randn(sq, rng, 0.02, true);
  p.w_k = Tensor::randn(sq, rng, 0.02, true);
  p.w_v = Tensor::randn(sq, rng, 0.02, true);
  p.w_o = Tensor::randn(sq, rng, 0.02, true);
  return p;
}

BudgetNets BudgetNets::create(int model_dim, int heads, Rng& rng) {
  if (heads < 1 || model_dim < 1) {
    throw ParameterError("BudgetNets: bad dims D=" + std::to_string(model_dim) +
                         " H=" + std::to_string(heads));
  }
  BudgetNets n;
  n.f1_w = Tensor::randn({model_dim, model_dim}, rng, 0.02, true);
  n.f1_b = Tensor::zeros({model_dim}, true);
  n.f2_w = Tensor::randn({model_dim, 1}, rng, 0.02, true);
  n.f2_b = Tensor::zeros({1}, true);
  n.g_w = Tensor::randn({model_dim, heads}, rng, 0.02, true);
  n.g_b = Tensor::zeros({heads}, true);
  return n;
}

void validate_pad_mask(const Tensor& pad_mask) {
  if (pad_mask.rank() != 2) {
    throw DimensionError("pad_mask must be [B,N], got " +
                         shape_to_string(pad_mask.shape()));
  }
  std::int64_t b = pad_mask.dim(0), n = pad_mask.dim(1);
  const double* mp = pad_mask.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    bool any = false;
    for (std::int64_t i = 0; i < n; ++i) {
      double v = mp[bi * n + i];
      if (v != 0.0 && v != 1.0) {
        throw DataError("pad_mask must be 0/1, got " + std::to_string(v) +
                        " at example " + std::to_string(bi));
      }
      any = any || (v == 1.0);
    }
    if (!any) {
      throw DegenerateInputError("pad_mask: example " + std::to_string(bi) +
                                 " has no active tokens");
    }
  }
}

namespace {

// [B,N,N] additive bias replicated over query rows
Tensor key_bias_from_mask(const Tensor& pad_mask) {
  std::int64_t b = pad_mask.dim(0), n = pad_mask.dim(1);
  Tensor bias = Tensor::zeros({b, n, n});
  const double* mp = pad_mask.data();
  double* bp = bias.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t j = 0; j < n; ++j) {
      double v = (mp[bi * n + j] == 0.0) ? kMaskedOut : 0.0;
      if (v == 0.0) continue;
      for (std::int64_t i = 0; i < n; ++i) bp[(bi * n + i) * n + j] = v;
    }
  }
  return bias;
}

// one head's scaled dot-product attention; x already projected
Tensor attend_one_head(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor& key_bias, int head_dim,
                       std::vector<std::vector<std::vector<double>>>* dump_rows,
                       int head_index) {
  Tensor scores = mul_scalar(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  Tensor probs = softmax(add(scores, key_bias), -1);
  if (dump_rows) {
    std::int64_t b = probs.dim(0), n = probs.dim(1);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      auto& cell = (*dump_rows)[static_cast<std::size_t>(bi)];
      // caller sized cell as [H]; fill this head's N*N block
      cell[static_cast<std::size_t>(head_index)].assign(
          probs.data() + bi * n * n, probs.data() + (bi + 1) * n * n);
    }
  }
  return matmul(probs, v);
}

Tensor column(const Tensor& x, int j) {  // [B,H] -> [B]
  return reshape(slice_last(x, j, 1), {x.dim(0)});
}

}  // namespace

Tensor standard_mha(const Tensor& x, const AttentionParams& params, const Tensor& pad_mask) {
  if (x.rank() != 3) {
    throw DimensionError("standard_mha: x must be [B,N,D], got " +
                         shape_to_string(x.shape()));
  }
  validate_pad_mask(pad_mask);
  int h = params.heads, dh = params.head_dim;
  Tensor q = matmul(x, params.w_q);
  Tensor k = matmul(x, params.w_k);
  Tensor v = matmul(x, params.w_v);
  Tensor bias = key_bias_from_mask(pad_mask);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    Tensor qi = slice_last(q, i * dh, dh);
    Tensor ki = slice_last(k, i * dh, dh);
    Tensor vi = slice_last(v, i * dh, dh);
    heads.push_back(attend_one_head(qi, ki, vi, bias, dh, nullptr, i));
  }
  return matmul(concat_last(heads), params.w_o);
}

Tensor compute_budget(const Tensor& pooled, const BudgetNets& nets) {
  if (pooled.rank() != 2) {
    throw DimensionError("compute_budget: pooled input must be [B,D], got " +
                         shape_to_string(pooled.shape()));
  }
  Tensor hidden = relu(linear(pooled, nets.f1_w, nets.f1_b));
  Tensor logit = linear(hidden, nets.f2_w, nets.f2_b);  // [B,1]
  return reshape(sigmoid(logit), {pooled.dim(0)});
}

Tensor head_scores(const Tensor& pooled, const BudgetNets& nets, std::int64_t t,
                   const ScheduleConfig& cfg, const NoiseKey& noise, Mode mode) {
  Tensor z = linear(pooled, nets.g_w, nets.g_b);  // [B,H]
  if (mode != Mode::train) return z;
  double sigma = noise_scale(t, cfg);
  if (sigma == 0.0) return z;
  std::int64_t b = z.dim(0), h = z.dim(1);
  Tensor eps = Tensor::zeros({b, h});
  for (std::int64_t bi = 0; bi < b; ++bi) {
    Rng stream = example_stream(noise.seed, noise.step, noise.layer, bi, StreamTag::noise);
    for (std::int64_t hi = 0; hi < h; ++hi) eps.data()[bi * h + hi] = stream.normal();
  }
  return add(z, mul_scalar(eps, sigma));
}

Tensor head_probs(const Tensor& scores, std::int64_t t, const ScheduleConfig& cfg) {
  return softmax(scores, -1, temperature(t, cfg));
}

std::vector<double> head_weights(double s, const std::vector<double>& p) {
  std::vector<double> w(p.size());
  double h = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) w[i] = s * h * p[i];
  return w;
}

Tensor head_weights(const Tensor& s, const Tensor& p) {
  if (p.rank() != 2 || s.rank() != 1 || s.dim(0) != p.dim(0)) {
    throw DimensionError("head_weights: want s [B] and p [B,H], got " +
                         shape_to_string(s.shape()) + " and " + shape_to_string(p.shape()));
  }
  return mul_scalar(scale_rows(p, s), static_cast<double>(p.dim(1)));
}

namespace {
// mask of the k largest entries; stable sort keeps ties on the lower index
std::vector<std::uint8_t> top_k_mask(const std::vector<double>& probs, int k) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::vector<std::uint8_t> mask(probs.size(), 0);
  for (int i = 0; i < k; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return mask;
}
}  // namespace

std::pair<int, std::vector<std::uint8_t>> select_top_k(const std::vector<double>& probs,
                                                       double s) {
  if (!(s > 0.0 && s < 1.0)) {
    throw ContractError("select_top_k: s must lie in (0,1), got " + std::to_string(s));
  }
  int h = static_cast<int>(probs.size());
  int k = std::max(1, static_cast<int>(std::floor(s * static_cast<double>(h))));
  return {k, top_k_mask(probs, k)};
}

BudgetedAttentionResult budgeted_attention(const Tensor& x, const AttentionParams& params,
                                           const BudgetNets& nets, const Tensor& pad_mask,
                                           const BudgetedAttentionOptions& opts) {
  if (x.rank() != 3) {
    throw DimensionError("budgeted_attention: x must be [B,N,D], got " +
                         shape_to_string(x.shape()));
  }
  validate_pad_mask(pad_mask);
  std::int64_t b = x.dim(0);
  int h = params.heads, dh = params.head_dim;

  const Tensor& pool_src = opts.pool_input ? *opts.pool_input : x;
  if (pool_src.shape() != x.shape()) {
    throw DimensionError("budgeted_attention: pool input shape " +
                         shape_to_string(pool_src.shape()) + " does not match x " +
                         shape_to_string(x.shape()));
  }
  Tensor pooled = masked_mean_pool(pool_src, pad_mask);
  Tensor s;
  if (opts.budget_rows) {
    if (static_cast<std::int64_t>(opts.budget_rows->size()) != b) {
      throw DimensionError("budgeted_attention: " + std::to_string(opts.budget_rows->size()) +
                           " budget rows for batch " + std::to_string(b));
    }
    for (double v : *opts.budget_rows) {
      if (!(v > 0.0 && v <= 1.0)) {
        throw ParameterError("budgeted_attention: frozen budget must lie in (0,1], got " +
                             std::to_string(v));
      }
    }
    s = Tensor::from_values({b}, *opts.budget_rows);
  } else if (opts.fixed_budget != 0.0) {
    if (!(opts.fixed_budget > 0.0 && opts.fixed_budget <= 1.0)) {
      throw ParameterError("budgeted_attention: fixed_budget must lie in (0,1], got " +
                           std::to_string(opts.fixed_budget));
    }
    s = Tensor::full({b}, opts.fixed_budget);
  } else {
    s = compute_budget(pooled, nets);
  }
  Tensor z;
  if (opts.random_gating) {
    // rank h-r for the head at permutation position r; constant, detached
    z = Tensor::zeros({b, static_cast<std::int64_t>(h)});
    for (std::int64_t bi = 0; bi < b; ++bi) {
      std::vector<std::int64_t> perm(static_cast<std::size_t>(h));
      for (int i = 0; i < h; ++i) perm[static_cast<std::size_t>(i)] = i;
      Rng stream = example_stream(opts.noise.seed, opts.noise.step, opts.noise.layer, bi,
                                  StreamTag::gating);
      stream.shuffle(perm);
      for (int r = 0; r < h; ++r) {
        z.data()[bi * h + perm[static_cast<std::size_t>(r)]] = static_cast<double>(h - r);
      }
    }
  } else {
    z = head_scores(pooled, nets, opts.step, opts.schedule, opts.noise, opts.mode);
  }
  Tensor p = head_probs(z, opts.step, opts.schedule);
  Tensor w = head_weights(s, p);

  BudgetedAttentionResult res;
  res.budget = s;
  res.probs = p;
  res.selections.resize(static_cast<std::size_t>(b));
  for (std::int64_t bi = 0; bi < b; ++bi) {
    HeadSelection& sel = res.selections[static_cast<std::size_t>(bi)];
    sel.budget = s.at(bi);
    sel.scores.assign(z.data() + bi * h, z.data() + (bi + 1) * h);
    sel.probs.assign(p.data() + bi * h, p.data() + (bi + 1) * h);
    sel.weights.assign(w.data() + bi * h, w.data() + (bi + 1) * h);
    if (opts.force_k > 0) {
      int fk = std::min(std::max(opts.force_k, 1), h);
      sel.active = top_k_mask(sel.probs, fk);
      sel.active_count = fk;
    } else if (sel.budget >= 1.0) {
      // saturated budget (fixed_budget 1.0 or a sigmoid that rounds to 1)
      sel.active.assign(static_cast<std::size_t>(h), 1);
      sel.active_count = h;
    } else {
      auto [k, mask] = select_top_k(sel.probs, sel.budget);
      sel.active = std::move(mask);
      sel.active_count = k;
    }
  }

  if (opts.dump) {
    opts.dump->probs.assign(static_cast<std::size_t>(b),
                            std::vector<std::vector<double>>(static_cast<std::size_t>(h)));
  }

  // per-head weights actually applied
  Tensor applied;
  bool skip_path = false;
  if (opts.mode == Mode::train) {
    applied = w;
  } else {
    Tensor gate = Tensor::zeros({b, static_cast<std::int64_t>(h)});
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (int hi = 0; hi < h; ++hi) {
        gate.data()[bi * h + hi] =
            res.selections[static_cast<std::size_t>(bi)].active[static_cast<std::size_t>(hi)]
                ? 1.0
                : 0.0;
      }
    }
    applied = mul(w, gate);
    skip_path = opts.allow_skip && b == 1;
  }

  Tensor q = matmul(x, params.w_q);
  Tensor k = matmul(x, params.w_k);
  Tensor v = matmul(x, params.w_v);
  Tensor bias = key_bias_from_mask(pad_mask);
  std::int64_t n = x.dim(1);
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(h));
  for (int hi = 0; hi < h; ++hi) {
    if (skip_path && !res.selections[0].active[static_cast<std::size_t>(hi)]) {
      parts.push_back(Tensor::zeros({b, n, static_cast<std::int64_t>(dh)}));
      continue;
    }
    Tensor qi = slice_last(q, hi * dh, dh);
    Tensor ki = slice_last(k, hi * dh, dh);
    Tensor vi = slice_last(v, hi * dh, dh);
    Tensor out_h = attend_one_head(qi, ki, vi, bias, dh,
                                   opts.dump ? &opts.dump->probs : nullptr, hi);
    parts.push_back(scale_rows(out_h, column(applied, hi)));
  }
  res.output = matmul(concat_last(parts), params.w_o);
  return res;
}

}  // namespace budgetformer
