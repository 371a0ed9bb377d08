#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace budgetformer {

// splitmix64: tiny, fast, and bitwise reproducible everywhere. We avoid
// std::normal_distribution and friends because their output is not pinned
// by the standard, which would break run-to-run determinism across stdlibs.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Mixes a stream label into a seed so substreams are independent.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t label) {
  std::uint64_t s = seed ^ (0xff51afd7ed558ccdull * (label + 1));
  splitmix64_next(s);
  return splitmix64_next(s) ^ s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // burn one draw so seed=0 and seed=golden-ratio don't collide at the start
    splitmix64_next(state_);
  }

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1] -- safe to pass through log()
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // standard normal via Box-Muller; one value per call, pair cached
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // uniform integer in [0, n); n must be positive
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::int64_t j = below(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Labels for independent substreams hanging off one run seed.
enum class StreamTag : std::uint64_t {
  init = 1,
  shuffle = 2,
  noise = 3,
  dropout = 4,
  gating = 5,
  data = 6,
};

// Deterministic per-(seed, step, layer, example) stream. Examples inside a
// batch could be processed in parallel without changing any draw.
inline Rng example_stream(std::uint64_t seed, std::int64_t step, int layer,
                          std::int64_t example, StreamTag tag) {
  std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(tag));
  s = mix_seed(s, static_cast<std::uint64_t>(step));
  s = mix_seed(s, static_cast<std::uint64_t>(layer));
  s = mix_seed(s, static_cast<std::uint64_t>(example));
  return Rng(s);
}

inline Rng run_stream(std::uint64_t seed, StreamTag tag, std::uint64_t extra = 0) {
  return Rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(tag)), extra));
}

}  // namespace budgetformer
