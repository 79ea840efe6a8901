#pragma once

#include <cstdint>
#include <limits>

namespace mvsum {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based 64-bit generator: the n-th output is a bijective mix of
/// (key + n * golden). Independent streams are obtained by deriving keys,
/// so chains and replicates never share state.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(derive_key(seed, stream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  /// Uniform double on [0, 1).
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [lo, hi] (inclusive). Lemire-style rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>((*this)());
    const std::uint64_t limit = max() - max() % range;
    std::uint64_t v;
    do {
      v = (*this)();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % range);
  }

  CounterRng split(std::uint64_t stream) const noexcept {
    CounterRng child(0);
    child.key_ = derive_key(key_, stream + 1);
    return child;
  }

  std::uint64_t counter() const noexcept { return counter_; }

private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mix64(seed ^ mix64(stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace mvsum
