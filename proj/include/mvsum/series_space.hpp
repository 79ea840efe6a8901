#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mvsum/errors.hpp"

// Deterministic structure linking observed data x_{1:n} to the latent
// variables of the moving-sum model x_t = y_t + y_{t-1} + ... + y_{t-m}.
//
// Indexing convention used throughout: data are 1-based in the maths and
// 0-based in storage, x[t-1] == x_t, with x_0 == 0. The initial latents are
// gamma_r == y_{-m+r}, r = 1..m. All values are held as double; integer data
// stay exact since every operation here is a sum or difference of integers
// far below 2^53.

namespace mvsum {

enum class SupportClass { unbounded_continuous, nonneg_continuous, nonneg_discrete };

constexpr bool is_bounded(SupportClass s) noexcept { return s != SupportClass::unbounded_continuous; }
constexpr bool is_discrete(SupportClass s) noexcept { return s == SupportClass::nonneg_discrete; }

inline const char* to_string(SupportClass s) noexcept {
  switch (s) {
  case SupportClass::unbounded_continuous: return "unbounded-continuous";
  case SupportClass::nonneg_continuous: return "nonneg-continuous";
  case SupportClass::nonneg_discrete: return "nonneg-discrete";
  }
  return "?";
}

inline bool is_integral(double v) noexcept { return std::isfinite(v) && v == std::nearbyint(v); }

struct ObservedSeries {
  std::vector<double> values;
  SupportClass support = SupportClass::unbounded_continuous;

  std::size_t size() const noexcept { return values.size(); }
  std::span<const double> view() const noexcept { return values; }

  /// Throws DataError naming the first offending (1-based) index.
  void validate() const {
    if (values.empty()) throw DataError("series is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = values[i];
      if (!std::isfinite(v))
        throw DataError("non-finite value at row " + std::to_string(i + 1));
      if (is_bounded(support) && v < 0)
        throw DataError("negative value " + std::to_string(v) + " at row " + std::to_string(i + 1) +
                        " violates " + to_string(support) + " support");
      if (is_discrete(support) && !is_integral(v))
        throw DataError("non-integer value " + std::to_string(v) + " at row " + std::to_string(i + 1) +
                        " violates " + to_string(support) + " support");
    }
  }
};

struct LatentState {
  int m = 0;
  std::vector<double> gamma;
  double gamma_dot = 0;

  LatentState() = default;
  explicit LatentState(std::vector<double> g)
      : m(static_cast<int>(g.size())), gamma(std::move(g)),
        gamma_dot(std::accumulate(gamma.begin(), gamma.end(), 0.0)) {}
};

/// Bounds of the polytope Y_m = { gamma : gamma_r >= lower[r], sum(gamma) <= upper }.
/// The m == 0 object is degenerate: upper = +inf, no lower bounds, slack = 0.
struct SegmentBounds {
  int m = 0;
  double upper = std::numeric_limits<double>::infinity();
  std::vector<double> lower;
  double slack = 0;
};

/// Absolute tolerance used for y_t >= 0 checks. Zero for integer data.
inline double membership_tolerance(std::span<const double> x, SupportClass support) noexcept {
  if (support != SupportClass::nonneg_continuous) return 0.0;
  double scale = 1.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  return 1e-12 * scale;
}

/// (x_1 - x_0, x_2 - x_1, ..., x_n - x_{n-1}) with x_0 == 0.
inline std::vector<double> backward_differences(std::span<const double> x) {
  std::vector<double> d(x.size());
  double prev = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d[i] = x[i] - prev;
    prev = x[i];
  }
  return d;
}

/// (x_1 - x_2, ..., x_{n-1} - x_n); element t-1 holds the forward difference at t.
inline std::vector<double> forward_differences(std::span<const double> x) {
  std::vector<double> d(x.empty() ? 0 : x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d[i] = x[i] - x[i + 1];
  return d;
}

/// Streams gamma_1..gamma_m followed by y_1..y_n to `visit`.
///
/// Uses the difference equation y_t = y_{t-(m+1)} + (x_t - x_{t-1}): each of
/// the m+1 residue classes of t is an independent running sum of backward
/// differences, which is the explicit reconstruction written recursively.
template <class Visitor>
void visit_latents(std::span<const double> x, std::span<const double> gamma, Visitor&& visit) {
  const std::size_t m = gamma.size();
  const std::size_t mbar = m + 1;
  // Small orders fit on the stack; the sampler never exceeds a few dozen.
  double stack_ring[64];
  std::vector<double> heap_ring;
  double* ring = stack_ring;
  if (mbar > 64) {
    heap_ring.resize(mbar);
    ring = heap_ring.data();
  }
  double gdot = 0;
  for (std::size_t r = 0; r < m; ++r) {
    ring[r] = gamma[r];
    gdot += gamma[r];
    visit(gamma[r]);
  }
  if (x.empty()) return;
  ring[m] = x[0] - gdot;
  visit(ring[m]);
  std::size_t slot = 0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    ring[slot] += x[t] - x[t - 1];
    visit(ring[slot]);
    if (++slot == mbar) slot = 0;
  }
}

/// y_{1:n} given x_{1:n} and gamma_{1:m}.
inline std::vector<double> reconstruct_latents(std::span<const double> x, std::span<const double> gamma) {
  std::vector<double> out;
  out.reserve(gamma.size() + x.size());
  visit_latents(x, gamma, [&](double y) { out.push_back(y); });
  out.erase(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(gamma.size()));
  return out;
}

/// (gamma_1, ..., gamma_m, y_1, ..., y_n): the full multiset entering the likelihood.
inline std::vector<double> extended_latents(std::span<const double> x, std::span<const double> gamma) {
  std::vector<double> out;
  out.reserve(gamma.size() + x.size());
  visit_latents(x, gamma, [&](double y) { out.push_back(y); });
  return out;
}

/// Applies the shift map `steps` times (negative = inverse) to a window of m
/// consecutive latents y_{u-m+1..u}. Forward steps consume x_{u+1}, backward
/// steps consume x_u, so the result must stay within offsets [0, n].
inline std::vector<double> shift_map(std::span<const double> x, std::span<const double> window,
                                     std::ptrdiff_t offset, std::ptrdiff_t steps) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (offset < 0 || offset > n)
    throw RangeError("shift_map: offset " + std::to_string(offset) + " outside [0, " + std::to_string(n) + "]");
  if (offset + steps < 0 || offset + steps > n)
    throw RangeError("shift_map: target offset " + std::to_string(offset + steps) + " outside [0, " +
                     std::to_string(n) + "]");
  std::vector<double> w(window.begin(), window.end());
  if (w.empty() || steps == 0) return w;
  auto sum = [&] { return std::accumulate(w.begin(), w.end(), 0.0); };
  std::ptrdiff_t u = offset;
  for (; steps > 0; --steps, ++u) {
    const double next = x[static_cast<std::size_t>(u)] - sum();
    std::rotate(w.begin(), w.begin() + 1, w.end());
    w.back() = next;
  }
  for (; steps < 0; ++steps, --u) {
    const double prev = x[static_cast<std::size_t>(u - 1)] - sum();
    std::rotate(w.rbegin(), w.rbegin() + 1, w.rend());
    w.front() = prev;
  }
  return w;
}

/// U^m, L^m_{1:m} and the slack D^m = U^m - sum L^m in one O(n) pass.
inline SegmentBounds compute_bounds(std::span<const double> x, int m) {
  if (m < 0) throw DomainError("compute_bounds: negative order");
  SegmentBounds b;
  b.m = m;
  if (m == 0 || x.empty()) return b;
  const std::size_t n = x.size();
  const std::size_t mbar = static_cast<std::size_t>(m) + 1;

  // Upper bound: partial sums of backward differences at t = 1, 1+mbar, ...
  double partial = 0, upper = std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t <= n; t += mbar) {
    partial += x[t - 1] - (t >= 2 ? x[t - 2] : 0.0);
    upper = std::min(upper, partial);
  }

  // Lower bounds: partial sums of forward differences at t = r, r+mbar, ...
  // with t+1 <= n.
  b.lower.assign(static_cast<std::size_t>(m), 0.0);
  for (std::size_t r = 1; r <= static_cast<std::size_t>(m); ++r) {
    double acc = 0, best = 0;
    for (std::size_t t = r; t + 1 <= n; t += mbar) {
      acc += x[t - 1] - x[t];
      best = std::max(best, acc);
    }
    b.lower[r - 1] = best;
  }
  b.upper = upper;
  b.slack = upper - std::accumulate(b.lower.begin(), b.lower.end(), 0.0);
  return b;
}

inline bool membership_m(std::span<const double> x, SupportClass support, int m) {
  if (m == 0 || !is_bounded(support)) return true;
  return compute_bounds(x, m).slack >= -membership_tolerance(x, support);
}

/// gamma in Y_m checked through a precomputed bounds object.
inline bool within_bounds(const SegmentBounds& b, std::span<const double> gamma, SupportClass support, double tol) {
  if (gamma.empty()) return true;
  if (!is_bounded(support)) {
    return std::all_of(gamma.begin(), gamma.end(), [](double g) { return std::isfinite(g); });
  }
  double sum = 0;
  for (std::size_t r = 0; r < gamma.size(); ++r) {
    if (is_discrete(support) && !is_integral(gamma[r])) return false;
    if (gamma[r] < b.lower[r] - tol) return false;
    sum += gamma[r];
  }
  return sum <= b.upper + tol;
}

/// gamma in Y_m(x) via the bounds U^m and L^m.
inline bool membership_gamma(std::span<const double> x, SupportClass support, std::span<const double> gamma) {
  if (gamma.empty()) return true;
  const auto b = compute_bounds(x, static_cast<int>(gamma.size()));
  return within_bounds(b, gamma, support, membership_tolerance(x, support));
}

/// gamma in Y_m(x) by reconstructing every latent and checking it lies in F.
inline bool membership_gamma_scan(std::span<const double> x, SupportClass support, std::span<const double> gamma) {
  if (!is_bounded(support)) {
    return std::all_of(gamma.begin(), gamma.end(), [](double g) { return std::isfinite(g); });
  }
  const double tol = membership_tolerance(x, support);
  bool ok = true;
  visit_latents(x, gamma, [&](double y) {
    if (y < -tol || (is_discrete(support) && !is_integral(y))) ok = false;
  });
  return ok;
}

inline std::vector<int> divisor_orders(int m) {
  if (m < 0) throw DomainError("divisor_orders: negative order");
  std::vector<int> out;
  const int mbar = m + 1;
  for (int d = 1; d <= mbar; ++d)
    if (mbar % d == 0) out.push_back(d - 1);
  return out;
}

/// Aggregates gamma_{1:m} onto order m' with (m'+1) | (m+1):
/// gamma'_r = sum_{j < l} gamma_{j(m'+1)+r}.
inline LatentState aggregate_J(const LatentState& s, int m_prime) {
  if (m_prime < 0 || (s.m + 1) % (m_prime + 1) != 0)
    throw DomainError("aggregate_J: " + std::to_string(m_prime + 1) + " does not divide " + std::to_string(s.m + 1));
  const int step = m_prime + 1;
  const int ell = (s.m + 1) / step;
  std::vector<double> out(static_cast<std::size_t>(m_prime), 0.0);
  for (int r = 1; r <= m_prime; ++r)
    for (int j = 0; j < ell; ++j) out[static_cast<std::size_t>(r - 1)] += s.gamma[static_cast<std::size_t>(j * step + r - 1)];
  return LatentState(std::move(out));
}

} // namespace mvsum
