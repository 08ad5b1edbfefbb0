#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mlhg {

// Deterministic random source. mt19937_64 output is fixed by the standard and
// the uniform/gaussian transforms below avoid the implementation-defined
// std::*_distribution classes, so a seed pins the exact byte stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Inclusive integer range.
  long range(long lo, long hi) { return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo + 1))); }

  // Box-Muller with a cached spare draw.
  double gaussian(double mean = 0.0, double stdev = 1.0);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Every run derives all of its randomness from one user-facing seed. Each
// consumer gets `seed + offset`, with per-epoch/per-batch indices added on
// top of the role offset where noted.
namespace seed_role {
inline constexpr std::uint64_t kSplit = 0x01000000;         // train/val partition
inline constexpr std::uint64_t kParamInit = 0x02000000;     // model weight init
inline constexpr std::uint64_t kEpochShuffle = 0x03000000;  // + epoch
inline constexpr std::uint64_t kDropout = 0x04000000;       // + epoch * 4096 + batch
inline constexpr std::uint64_t kEmbedding = 0x05000000;     // OOV embedding rows
inline constexpr std::uint64_t kSynthesis = 0x06000000;     // corpus generator
inline constexpr std::uint64_t kPcaStart = 0x07000000;      // power-iteration start vectors
inline constexpr std::uint64_t kGradCheck = 0x08000000;     // gradient-check graphs
}  // namespace seed_role

inline std::uint64_t sub_seed(std::uint64_t base, std::uint64_t role_offset) {
  return base + role_offset;
}

}  // namespace mlhg
