#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "mvsum/errors.hpp"
#include "mvsum/families.hpp"
#include "mvsum/rng.hpp"
#include "mvsum/series_space.hpp"
#include "mvsum/simulator.hpp"
#include "mvsum/trace.hpp"

namespace mvsum {

/// MAP k (ties to the lower k), then the most frequent tau among samples with
/// that k (ties to the lexicographically smallest), then per-segment modal m.
inline ChangepointEstimate map_estimate(std::span<const ChainState> samples) {
  if (samples.empty()) throw DomainError("map_estimate: empty trace");
  std::map<int, std::size_t> k_counts;
  for (const auto& s : samples) ++k_counts[s.k()];
  ChangepointEstimate est;
  std::size_t best = 0;
  for (const auto& [k, c] : k_counts)
    if (c > best) {
      best = c;
      est.k_hat = k;
    }
  std::map<std::vector<int>, std::size_t> tau_counts;
  for (const auto& s : samples)
    if (s.k() == est.k_hat) ++tau_counts[s.tau];
  best = 0;
  for (const auto& [tau, c] : tau_counts)
    if (c > best) {
      best = c;
      est.tau_hat = tau;
    }
  std::vector<std::map<int, std::size_t>> m_counts(static_cast<std::size_t>(est.k_hat) + 1);
  for (const auto& s : samples)
    if (s.tau == est.tau_hat)
      for (std::size_t j = 0; j < s.segments.size(); ++j) ++m_counts[j][s.segments[j].m];
  for (const auto& mc : m_counts) {
    int m_best = 0;
    best = 0;
    for (const auto& [m, c] : mc)
      if (c > best) {
        best = c;
        m_best = m;
      }
    est.m_hat.push_back(m_best);
  }
  return est;
}

inline ChangepointEstimate map_estimate(const ChainTrace& trace) { return map_estimate(trace.samples); }

struct F1Score {
  double f1 = 0;
  double precision = 0;
  double recall = 0;
  std::size_t matched = 0;
};

/// Detection scores under tolerance epsilon with one-to-one matching, pairs
/// taken greedily by distance.
inline F1Score f1_score(std::span<const int> truth, std::span<const int> est, int epsilon) {
  if (epsilon < 0) throw DomainError("f1_score: epsilon must be non-negative");
  F1Score s;
  if (truth.empty() && est.empty()) return {1, 1, 1, 0};
  struct Pair {
    int dist, lo, hi;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t j = 0; j < est.size(); ++j) {
      const int d = std::abs(truth[i] - est[j]);
      if (d <= epsilon) pairs.push_back({d, std::min(truth[i], est[j]), std::max(truth[i], est[j]), i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.lo, a.hi) < std::tie(b.dist, b.lo, b.hi);
  });
  std::vector<bool> used_t(truth.size()), used_e(est.size());
  for (const auto& p : pairs)
    if (!used_t[p.i] && !used_e[p.j]) {
      used_t[p.i] = used_e[p.j] = true;
      ++s.matched;
    }
  const double tp = static_cast<double>(s.matched);
  s.precision = est.empty() ? 1.0 : tp / static_cast<double>(est.size());
  s.recall = truth.empty() ? 1.0 : tp / static_cast<double>(truth.size());
  if (truth.empty() || est.empty() || s.matched == 0) s.f1 = 0;
  else s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

struct MSpaceRow {
  int n = 0;
  int m = 0;
  double theta = 0;
  int m_prime = 0;
  double q = 0;
};

/// Proportion of simulated segments for which each order m' is feasible,
/// for every (n, m, theta) cell. Rows are ordered by n, m, theta, m'.
template <SegmentFamily Family>
std::vector<MSpaceRow> mspace_study(const Family& f, std::span<const int> m_grid, std::span<const int> n_grid,
                                    std::span<const double> theta_grid, int replicates, int m_prime_max,
                                    std::uint64_t seed) {
  if (m_grid.empty() || n_grid.empty() || theta_grid.empty()) throw DomainError("mspace_study: empty grid");
  if (replicates < 1) throw DomainError("mspace_study: replicates must be >= 1");
  if (m_prime_max < 0) throw DomainError("mspace_study: m_prime_max must be non-negative");
  std::vector<MSpaceRow> rows;
  for (std::size_t in = 0; in < n_grid.size(); ++in)
    for (std::size_t im = 0; im < m_grid.size(); ++im)
      for (std::size_t it = 0; it < theta_grid.size(); ++it) {
        const auto theta = Family::scalar_theta(theta_grid[it]);
        std::vector<int> hits(static_cast<std::size_t>(m_prime_max) + 1, 0);
        CounterRng rng(seed, (in * 1000003 + im) * 1000003 + it);
        for (int rep = 0; rep < replicates; ++rep) {
          const auto d = simulate_segment(f, theta, m_grid[im], n_grid[in], rng);
          for (int mp = 0; mp <= m_prime_max; ++mp)
            if (membership_m(d.x, Family::support, mp)) ++hits[static_cast<std::size_t>(mp)];
        }
        for (int mp = 0; mp <= m_prime_max; ++mp)
          rows.push_back({n_grid[in], m_grid[im], theta_grid[it], mp,
                          static_cast<double>(hits[static_cast<std::size_t>(mp)]) / replicates});
      }
  return rows;
}

struct ConvergenceReport {
  std::vector<ChangepointEstimate> estimates;
  std::vector<int> reference;
  bool reference_is_truth = false;
  std::vector<double> f1;
  double f1_mean = 0;
  double f1_variance = 0;
  double threshold = 0.1;
  bool flagged = false;
  /// Per chain: first iteration whose state matches the reference (k equal
  /// and F1 = 1 when the tau path was recorded, k equal otherwise); -1 if never.
  std::vector<long long> first_consensus;
};

inline ConvergenceReport convergence_report(std::span<const ChainTrace> traces, std::optional<std::vector<int>> truth,
                                            int epsilon = 5, double threshold = 0.1) {
  if (traces.size() < 2) throw DomainError("convergence_report: needs at least two traces");
  ConvergenceReport r;
  r.threshold = threshold;
  for (const auto& t : traces) r.estimates.push_back(map_estimate(t));
  r.reference_is_truth = truth.has_value();
  r.reference = truth ? *truth : r.estimates.front().tau_hat;
  for (const auto& e : r.estimates) r.f1.push_back(f1_score(r.reference, e.tau_hat, epsilon).f1);
  const double n = static_cast<double>(r.f1.size());
  r.f1_mean = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / n;
  double ss = 0;
  for (double v : r.f1) ss += (v - r.f1_mean) * (v - r.f1_mean);
  r.f1_variance = ss / (n - 1);
  r.flagged = r.f1_variance > threshold;
  const int k_ref = static_cast<int>(r.reference.size());
  for (const auto& t : traces) {
    long long hit = -1;
    for (std::size_t i = 0; i < t.k_path.size(); ++i) {
      if (t.k_path[i] != k_ref) continue;
      if (!t.tau_path.empty() && f1_score(r.reference, t.tau_path[i], epsilon).f1 < 1) continue;
      hit = static_cast<long long>(i);
      break;
    }
    r.first_consensus.push_back(hit);
  }
  return r;
}

} // namespace mvsum
