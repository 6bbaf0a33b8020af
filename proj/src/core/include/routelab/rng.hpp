#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace routelab {

// Seeded generator with platform-independent draws. The std distributions are
// implementation-defined, so uniform/normal sampling is done here on top of
// the (fully specified) mt19937_64 engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Sub-seed for task `index` of stream `stream`. Every parallelizable loop draws
// its per-task generator from here, so results do not depend on scheduling:
//   derive_seed(s, t, i) = splitmix64(splitmix64(s ^ splitmix64(t)) + i)
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Stream tags used by the library.
namespace streams {
inline constexpr std::uint64_t kPermutation = 0x7065726d;  // "perm"
inline constexpr std::uint64_t kFolds = 0x666f6c64;        // "fold"
inline constexpr std::uint64_t kBootstrap = 0x626f6f74;    // "boot"
inline constexpr std::uint64_t kSubsample = 0x73756273;    // "subs"
inline constexpr std::uint64_t kSynthetic = 0x73796e74;    // "synt"
inline constexpr std::uint64_t kRandomDir = 0x72646972;    // "rdir"
inline constexpr std::uint64_t kPowerIter = 0x70777269;    // "pwri"
}  // namespace streams

// Indices drawn with replacement from [0, n).
std::vector<std::size_t> resample_indices(Rng& rng, std::size_t n);

}  // namespace routelab
