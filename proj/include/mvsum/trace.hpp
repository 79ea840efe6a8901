#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mvsum {

struct SegmentState {
  int m = 0;
  std::vector<double> gamma;
  double loglik = 0;
};

/// Changepoints tau (strictly increasing in 2..T) plus one SegmentState per
/// segment. Segment j covers [tau_{j-1}, tau_j - 1] with tau_0 = 1, tau_{k+1} = T + 1.
struct ChainState {
  std::vector<int> tau;
  std::vector<SegmentState> segments;
  double log_target = 0;

  int k() const noexcept { return static_cast<int>(tau.size()); }
};

enum class MoveType : std::uint8_t { shift, update_gamma, update_m, birth, death };
inline constexpr std::size_t kMoveTypes = 5;

inline const char* to_string(MoveType t) noexcept {
  switch (t) {
  case MoveType::shift: return "shift";
  case MoveType::update_gamma: return "update_gamma";
  case MoveType::update_m: return "update_m";
  case MoveType::birth: return "birth";
  case MoveType::death: return "death";
  }
  return "?";
}

struct MoveRecord {
  MoveType type = MoveType::shift;
  bool available = true;
  bool accepted = false;
  double log_ratio = 0;
  int k_after = 0;
};

struct MoveCounts {
  std::size_t proposed = 0;
  std::size_t unavailable = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const noexcept {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct ChainTrace {
  int T = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  ChainState initial;
  std::vector<ChainState> samples;
  std::vector<std::size_t> sample_iterations;
  std::vector<MoveRecord> moves;
  /// k after every iteration; k_path[0] is the initial state.
  std::vector<int> k_path;
  /// Changepoints after every iteration when recording is enabled.
  std::vector<std::vector<int>> tau_path;
  std::array<MoveCounts, kMoveTypes> counts{};
};

struct ChangepointEstimate {
  int k_hat = 0;
  std::vector<int> tau_hat;
  std::vector<int> m_hat;
};

} // namespace mvsum
