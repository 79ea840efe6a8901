#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "mvsum/errors.hpp"
#include "mvsum/families.hpp"
#include "mvsum/rng.hpp"
#include "mvsum/series_space.hpp"

namespace mvsum {

struct SegmentDraw {
  std::vector<double> x;
  std::vector<double> gamma;
  std::vector<double> latents; // gamma followed by y_1..y_n
};

/// Draws m + n iid latents from f_m(.|theta) and forms their moving sums.
template <SegmentFamily Family, class Rng>
SegmentDraw simulate_segment(const Family& f, const typename Family::Theta& theta, int m, int n, Rng& rng) {
  if (n < 1) throw DomainError("simulate_segment: n must be >= 1");
  if (m < 0) throw DomainError("simulate_segment: negative order");
  Family::check(theta);
  SegmentDraw d;
  d.latents.resize(static_cast<std::size_t>(m + n));
  for (auto& y : d.latents) y = f.sample_latent(theta, m, rng);
  d.gamma.assign(d.latents.begin(), d.latents.begin() + m);
  d.x.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    double sum = 0;
    for (int i = 0; i <= m; ++i) sum += d.latents[static_cast<std::size_t>(t + i)];
    d.x[static_cast<std::size_t>(t)] = sum;
  }
  return d;
}

struct ScenarioSpec {
  int T = 100;
  std::vector<int> tau;
  double nu = 1.0;
  /// Normal scenarios: segment means alternate +mu, -mu, ...
  double mu = 8.0;
  /// Normal scenarios: sigma^-2 ~ Gamma(alpha0, rate precision_rate).
  double alpha0 = 25.0;
  double precision_rate = 100.0;
  /// Optional fixed per-segment orders (overrides the geometric draw).
  std::vector<int> m;
  /// Optional fixed per-segment scalar parameters (sigma, rate or prob).
  std::vector<double> theta;
  std::uint64_t seed = 1;

  void validate() const {
    if (T < 1) throw ConfigError("scenario: T must be >= 1");
    for (std::size_t i = 0; i < tau.size(); ++i) {
      if (tau[i] < 2 || tau[i] > T) throw ConfigError("scenario: changepoint " + std::to_string(tau[i]) + " outside 2..T");
      if (i > 0 && tau[i] <= tau[i - 1]) throw ConfigError("scenario: changepoints must be strictly increasing");
    }
    if (!(nu > 0 && nu <= 1)) throw ConfigError("scenario: nu must lie in (0, 1]");
    if (!(alpha0 > 0) || !(precision_rate > 0)) throw ConfigError("scenario: alpha0 and precision_rate must be positive");
    if (!m.empty() && m.size() != tau.size() + 1) throw ConfigError("scenario: m list must have k + 1 entries");
    for (int v : m)
      if (v < 0) throw ConfigError("scenario: orders must be non-negative");
    if (!theta.empty() && theta.size() != tau.size() + 1) throw ConfigError("scenario: theta list must have k + 1 entries");
  }
};

template <SegmentFamily Family>
struct SegmentTruth {
  int start = 1;
  int end = 1;
  int m = 0;
  typename Family::Theta theta{};
  std::vector<double> gamma;
};

template <SegmentFamily Family>
struct SimulatedSeries {
  std::vector<double> x;
  std::vector<int> tau;
  std::vector<SegmentTruth<Family>> segments;
};

template <SegmentFamily Family, class Rng>
SimulatedSeries<Family> simulate_changepoint_series(const ScenarioSpec& spec, const Family& f, Rng& rng) {
  spec.validate();
  SimulatedSeries<Family> out;
  out.tau = spec.tau;
  out.x.reserve(static_cast<std::size_t>(spec.T));
  const std::size_t segs = spec.tau.size() + 1;
  std::geometric_distribution<int> geom(spec.nu);
  for (std::size_t j = 0; j < segs; ++j) {
    SegmentTruth<Family> s;
    s.start = j == 0 ? 1 : spec.tau[j - 1];
    s.end = j + 1 < segs ? spec.tau[j] - 1 : spec.T;
    s.m = spec.m.empty() ? (spec.nu >= 1 ? 0 : geom(rng)) : spec.m[j];
    if constexpr (std::is_same_v<Family, NormalFamily>) {
      s.theta.mu = j % 2 == 0 ? spec.mu : -spec.mu;
      if (spec.theta.empty()) {
        std::gamma_distribution<double> prec(spec.alpha0, 1.0 / spec.precision_rate);
        s.theta.sigma = 1.0 / std::sqrt(prec(rng));
      } else {
        s.theta.sigma = spec.theta[j];
      }
    } else {
      s.theta = spec.theta.empty() ? f.sample_prior(rng) : Family::scalar_theta(spec.theta[j]);
    }
    auto draw = simulate_segment(f, s.theta, s.m, s.end - s.start + 1, rng);
    out.x.insert(out.x.end(), draw.x.begin(), draw.x.end());
    s.gamma = std::move(draw.gamma);
    out.segments.push_back(std::move(s));
  }
  return out;
}

} // namespace mvsum
