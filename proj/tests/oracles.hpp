#pragma once

// Reference computations used by the tests: direct numerical integration of
// the latent likelihood against the prior, and brute-force enumeration of
// segmentations. Nothing here calls the closed forms under test.

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "mvsum/families.hpp"
#include "mvsum/series_space.hpp"

namespace oracle {

using mvsum::GammaHyper;
using mvsum::NegBinHyper;
using mvsum::NormalHyper;

inline double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 12, 1e-11);
}

// Maximum of h on a uniform grid, refined twice around the best point.
inline double grid_argmax(const std::function<double(double)>& h, double lo, double hi) {
  double best = lo, best_v = -INFINITY;
  for (int pass = 0; pass < 3; ++pass) {
    const double step = (hi - lo) / 120;
    for (int i = 0; i <= 120; ++i) {
      const double u = lo + i * step;
      const double v = h(u);
      if (v > best_v) {
        best_v = v;
        best = u;
      }
    }
    lo = best - 2 * step;
    hi = best + 2 * step;
  }
  return best;
}

// log of the integral of exp(h(u)) du over the real line, for a unimodal h
// that decays at least linearly in the tails.
inline double log_integral_unimodal(const std::function<double(double)>& h, double lo, double hi, double half_width) {
  const double c = grid_argmax(h, lo, hi);
  const double h0 = h(c);
  const double val = integrate([&](double u) { return std::exp(h(u) - h0); }, c - half_width, c + half_width);
  return h0 + std::log(val);
}

/// log L(x, gamma | m) for the normal family by integrating over log precision
/// (outer) and the mean (inner).
inline double normal_loglik(std::span<const double> x, std::span<const double> gamma, const NormalHyper& h) {
  const int m = static_cast<int>(gamma.size());
  const double mbar = m + 1.0;
  const auto y = mvsum::extended_latents(x, gamma);
  const double N = static_cast<double>(y.size());
  double sy = 0;
  for (double v : y) sy += v;
  auto log_joint = [&](double mu, double tau) {
    double s = 0;
    for (double v : y) {
      const double d = v - mu / mbar;
      s += 0.5 * std::log(mbar * tau / (2 * M_PI)) - 0.5 * mbar * tau * d * d;
    }
    const double prior_tau = h.alpha * std::log(h.beta) - std::lgamma(h.alpha) + (h.alpha - 1) * std::log(tau) - h.beta * tau;
    const double prior_mu = 0.5 * std::log(h.lambda * tau / (2 * M_PI)) - 0.5 * h.lambda * tau * (mu - h.mu0) * (mu - h.mu0);
    return s + prior_tau + prior_mu;
  };
  // Centre and width for the inner integral (Gaussian in mu for fixed tau).
  const double centre = (h.lambda * h.mu0 + sy) / (h.lambda + N / mbar);
  auto inner = [&](double u) {
    const double tau = std::exp(u);
    const double sd = 1.0 / std::sqrt(tau * (h.lambda + N / mbar));
    const double h0 = log_joint(centre, tau);
    // The mu-integrand is a Gaussian; one 61-point rule over +-14 sd is exact to rounding.
    const double val = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double mu) { return std::exp(log_joint(mu, tau) - h0); }, centre - 14 * sd, centre + 14 * sd, 0, 0);
    return h0 + std::log(val) + u;
  };
  return log_integral_unimodal(inner, -30, 30, 40);
}

inline double gamma_loglik(std::span<const double> x, std::span<const double> gamma, const GammaHyper& h) {
  const int m = static_cast<int>(gamma.size());
  const double lm = h.lambda / (m + 1.0);
  const auto y = mvsum::extended_latents(x, gamma);
  for (double v : y)
    if (v < 0) return -INFINITY;
  auto g = [&](double u) {
    const double th = std::exp(u);
    double s = h.alpha * std::log(h.beta) - std::lgamma(h.alpha) + (h.alpha - 1) * u - h.beta * th;
    for (double v : y) s += lm * u - std::lgamma(lm) + (lm - 1) * std::log(v) - th * v;
    return s + u;
  };
  return log_integral_unimodal(g, -40, 40, 40);
}

inline double negbin_loglik(std::span<const double> x, std::span<const double> gamma, const NegBinHyper& h) {
  const int m = static_cast<int>(gamma.size());
  const double rm = h.r / (m + 1.0);
  const auto y = mvsum::extended_latents(x, gamma);
  for (double v : y)
    if (v < 0 || v != std::floor(v)) return -INFINITY;
  auto g = [&](double u) {
    // theta = logistic(u); log theta and log(1 - theta) computed stably.
    const double lt = -std::log1p(std::exp(-u)), l1t = -std::log1p(std::exp(u));
    double s = (h.alpha - 1) * lt + (h.beta - 1) * l1t - std::log(boost::math::beta(h.alpha, h.beta));
    for (double v : y) s += std::lgamma(v + rm) - std::lgamma(v + 1) - std::lgamma(rm) + v * lt + rm * l1t;
    return s + lt + l1t;
  };
  return log_integral_unimodal(g, -40, 40, 60);
}

/// Exact posterior over segmentations of x (m = 0 everywhere), keyed by the
/// changepoint vector, given a log marginal for each segment [a, b].
inline std::map<std::vector<int>, double> enumerate_segmentations(int T, double p,
                                                                  const std::function<double(int, int)>& log_marginal) {
  std::map<std::pair<int, int>, double> seg;
  for (int a = 1; a <= T; ++a)
    for (int b = a; b <= T; ++b) seg[{a, b}] = log_marginal(a, b);
  std::map<std::vector<int>, double> logpost;
  double mx = -INFINITY;
  for (unsigned mask = 0; mask < (1u << (T - 1)); ++mask) {
    std::vector<int> tau;
    for (int t = 2; t <= T; ++t)
      if (mask & (1u << (t - 2))) tau.push_back(t);
    const int k = static_cast<int>(tau.size());
    double lp = k * std::log(p) + (T - 1 - k) * std::log1p(-p);
    int a = 1;
    for (int c : tau) {
      lp += seg[{a, c - 1}];
      a = c;
    }
    lp += seg[{a, T}];
    logpost[tau] = lp;
    mx = std::max(mx, lp);
  }
  double z = 0;
  for (auto& [t, v] : logpost) z += std::exp(v - mx);
  for (auto& [t, v] : logpost) v = std::exp(v - mx) / z;
  return logpost;
}

} // namespace oracle
