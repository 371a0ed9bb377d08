#pragma once

// Independent reference implementations used only by tests. Everything here
// is written as plain nested loops over std::vector<double>, on purpose: no
// tensor library, no shared code with the implementation under test.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// Multi-head attention with optional per-(example, head) output weights.
// x: B*N*D, weights w*: D*D (row-major, out = in @ w), mask: B*N of 0/1.
// head_weights: B*H, or empty for plain attention.
inline std::vector<double> naive_mha(const std::vector<double>& x,
                                     const std::vector<double>& wq,
                                     const std::vector<double>& wk,
                                     const std::vector<double>& wv,
                                     const std::vector<double>& wo,
                                     const std::vector<double>& mask,
                                     std::int64_t b, std::int64_t n, std::int64_t d,
                                     int h,
                                     const std::vector<double>& head_weights = {}) {
  std::int64_t dh = d / h;
  auto project = [&](const std::vector<double>& w) {
    std::vector<double> out(static_cast<std::size_t>(b * n * d), 0.0);
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::int64_t t = 0; t < d; ++t)
            acc += x[static_cast<std::size_t>((bi * n + i) * d + t)] *
                   w[static_cast<std::size_t>(t * d + j)];
          out[static_cast<std::size_t>((bi * n + i) * d + j)] = acc;
        }
    return out;
  };
  std::vector<double> q = project(wq), k = project(wk), v = project(wv);
  std::vector<double> concat(static_cast<std::size_t>(b * n * d), 0.0);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (int hi = 0; hi < h; ++hi) {
      double wgt = head_weights.empty()
                       ? 1.0
                       : head_weights[static_cast<std::size_t>(bi * h + hi)];
      for (std::int64_t i = 0; i < n; ++i) {
        // scores over keys, padded keys excluded
        std::vector<double> sc(static_cast<std::size_t>(n), 0.0);
        double mx = -1e300;
        for (std::int64_t j = 0; j < n; ++j) {
          if (mask[static_cast<std::size_t>(bi * n + j)] == 0.0) continue;
          double acc = 0.0;
          for (std::int64_t t = 0; t < dh; ++t)
            acc += q[static_cast<std::size_t>((bi * n + i) * d + hi * dh + t)] *
                   k[static_cast<std::size_t>((bi * n + j) * d + hi * dh + t)];
          acc /= std::sqrt(static_cast<double>(dh));
          sc[static_cast<std::size_t>(j)] = acc;
          mx = std::max(mx, acc);
        }
        double denom = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          if (mask[static_cast<std::size_t>(bi * n + j)] == 0.0) continue;
          sc[static_cast<std::size_t>(j)] = std::exp(sc[static_cast<std::size_t>(j)] - mx);
          denom += sc[static_cast<std::size_t>(j)];
        }
        for (std::int64_t t = 0; t < dh; ++t) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < n; ++j) {
            if (mask[static_cast<std::size_t>(bi * n + j)] == 0.0) continue;
            acc += (sc[static_cast<std::size_t>(j)] / denom) *
                   v[static_cast<std::size_t>((bi * n + j) * d + hi * dh + t)];
          }
          concat[static_cast<std::size_t>((bi * n + i) * d + hi * dh + t)] = acc * wgt;
        }
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(b * n * d), 0.0);
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < d; ++t)
          acc += concat[static_cast<std::size_t>((bi * n + i) * d + t)] *
                 wo[static_cast<std::size_t>(t * d + j)];
        out[static_cast<std::size_t>((bi * n + i) * d + j)] = acc;
      }
  return out;
}

// ---- instrumented flop/memory counting ----
// Counts 2 per multiply-add by walking the actual loop nests. Only matrix
// products count; softmax, scaling, residuals and normalization do not.

struct CountedCost {
  long long projection = 0;
  long long attention = 0;
  long long budget_nets = 0;
  long long memory_scalars = 0;
};

// one attention layer's projections (Q, K, V, O) for a B x N batch
inline long long count_projection_flops(std::int64_t b, std::int64_t n, std::int64_t d) {
  long long flops = 0;
  for (int proj = 0; proj < 4; ++proj)
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
          for (std::int64_t t = 0; t < d; ++t) flops += 2;
  return flops;
}

// scores (N x N over d_h) plus weighted values, for k active heads
inline long long count_attention_flops(std::int64_t b, std::int64_t n, std::int64_t dh,
                                       std::int64_t k) {
  long long flops = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t hi = 0; hi < k; ++hi) {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          for (std::int64_t t = 0; t < dh; ++t) flops += 2;  // q . k
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t t = 0; t < dh; ++t)
          for (std::int64_t j = 0; j < n; ++j) flops += 2;  // probs @ v
    }
  return flops;
}

// f: D -> D -> 1, g: D -> H (matrix products only, biases don't multiply)
inline long long count_budget_net_flops(std::int64_t b, std::int64_t d, std::int64_t h) {
  long long flops = 0;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t j = 0; j < d; ++j)
      for (std::int64_t t = 0; t < d; ++t) flops += 2;  // f first layer
    for (std::int64_t t = 0; t < d; ++t) flops += 2;    // f second layer (D -> 1)
    for (std::int64_t j = 0; j < h; ++j)
      for (std::int64_t t = 0; t < d; ++t) flops += 2;  // g
  }
  return flops;
}

// attention probability storage: one N x N matrix per active head
inline long long count_attention_memory(std::int64_t b, std::int64_t n, std::int64_t k) {
  long long scalars = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t hi = 0; hi < k; ++hi)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) scalars += 1;
  return scalars;
}

// feed-forward D -> m*D -> D, per token
inline long long count_ffn_flops(std::int64_t b, std::int64_t n, std::int64_t d,
                                 std::int64_t mult) {
  long long flops = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < mult * d; ++j)
        for (std::int64_t t = 0; t < d; ++t) flops += 2;  // up projection
      for (std::int64_t j = 0; j < d; ++j)
        for (std::int64_t t = 0; t < mult * d; ++t) flops += 2;  // down projection
    }
  return flops;
}

// final linear layer on the pooled vector
inline long long count_classifier_flops(std::int64_t b, std::int64_t d, std::int64_t c) {
  long long flops = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t j = 0; j < c; ++j)
      for (std::int64_t t = 0; t < d; ++t) flops += 2;
  return flops;
}

}  // namespace oracles
