#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "mvsum/errors.hpp"
#include "mvsum/series_space.hpp"

namespace mvsum {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_gamma(double x) noexcept {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

inline double log_beta(double a, double b) noexcept { return log_gamma(a) + log_gamma(b) - log_gamma(a + b); }

inline double log_sum_exp(std::span<const double> v) noexcept {
  double mx = kNegInf;
  for (double e : v) mx = std::max(mx, e);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double e : v) s += std::exp(e - mx);
  return mx + std::log(s);
}

struct Interval {
  double lo = kNegInf;
  double hi = kInf;
  double width() const noexcept { return hi - lo; }
};

inline void require_positive(double v, const char* what) {
  if (!(v > 0) || !std::isfinite(v)) throw DomainError(std::string(what) + " must be positive and finite");
}

// ---------------------------------------------------------------------------
// Normal marginals: latents N(mu/mbar, sigma^2/mbar), normal-gamma prior
// mu | sigma ~ N(mu0, sigma^2/lambda), sigma^-2 ~ Gamma(alpha, beta).

struct NormalHyper {
  double mu0 = 0;
  double lambda = 1;
  double alpha = 1;
  double beta = 1;
};

struct NormalTheta {
  double mu = 0;
  double sigma = 1;
};

class NormalFamily {
public:
  using Hyper = NormalHyper;
  using Theta = NormalTheta;
  static constexpr SupportClass support = SupportClass::unbounded_continuous;
  static constexpr const char* name = "normal";

  explicit NormalFamily(Hyper h = {}) : h_(h) {
    if (!std::isfinite(h_.mu0)) throw DomainError("normal: mu0 must be finite");
    require_positive(h_.lambda, "normal: lambda");
    require_positive(h_.alpha, "normal: alpha");
    require_positive(h_.beta, "normal: beta");
  }

  const Hyper& hyper() const noexcept { return h_; }

  // Welford accumulator over the extended latents.
  struct Stats {
    std::size_t count = 0;
    double mean = 0;
    double m2 = 0;
    bool feasible = true;
    void add(double y) noexcept {
      if (!std::isfinite(y)) {
        feasible = false;
        return;
      }
      ++count;
      const double d = y - mean;
      mean += d / static_cast<double>(count);
      m2 += d * (y - mean);
    }
  };

  Stats make_stats(int /*m*/, double /*tol*/ = 0) const { return {}; }

  double log_marginal(const Stats& s, int m) const {
    if (!s.feasible) return kNegInf;
    const double mbar = m + 1.0;
    const double N = static_cast<double>(s.count);
    const double lam_post = (N + mbar * h_.lambda) / mbar;
    const double a_post = N / 2 + h_.alpha;
    // beta + (mbar/2) sum y^2 + (lambda/2) mu0^2 - (lambda mu0 + sum y)^2 / (2 lam_post),
    // regrouped into a centred form.
    const double shift = mbar * s.mean - h_.mu0;
    const double b_post =
        h_.beta + 0.5 * mbar * s.m2 + 0.5 * h_.lambda * (N / mbar) * shift * shift / lam_post;
    return 0.5 * N * std::log(mbar / (2 * M_PI)) + 0.5 * std::log(h_.lambda / lam_post) + h_.alpha * std::log(h_.beta) -
           log_gamma(h_.alpha) + log_gamma(a_post) - a_post * std::log(b_post);
  }

  double latent_log_density(int m, const Theta& th, double y) const {
    check(th);
    const double mbar = m + 1.0;
    const double var = th.sigma * th.sigma / mbar;
    const double d = y - th.mu / mbar;
    return -0.5 * std::log(2 * M_PI * var) - d * d / (2 * var);
  }

  /// Mode of the m = 0 posterior over (mu, sigma^-2).
  Theta theta_hat(std::span<const double> x) const {
    if (x.empty()) throw DomainError("theta_hat: empty segment");
    const double n = static_cast<double>(x.size());
    double mean = 0, m2 = 0;
    std::size_t c = 0;
    for (double v : x) {
      ++c;
      const double d = v - mean;
      mean += d / static_cast<double>(c);
      m2 += d * (v - mean);
    }
    const double lam_n = h_.lambda + n;
    const double mu_n = (h_.lambda * h_.mu0 + n * mean) / lam_n;
    const double a_n = h_.alpha + n / 2;
    const double b_n = h_.beta + 0.5 * m2 + h_.lambda * n * (mean - h_.mu0) * (mean - h_.mu0) / (2 * lam_n);
    const double prec = (a_n - 0.5) / b_n;
    return {mu_n, 1.0 / std::sqrt(prec)};
  }

  double jump_variance(const Theta& th, int m) const {
    check(th);
    return th.sigma * th.sigma / (m + 1.0);
  }

  double latent_mode(const Theta& th, int m) const { return th.mu / (m + 1.0); }

  /// Central interval holding mass eta of the latent density.
  Interval latent_interval(const Theta& th, int m, double eta) const {
    const double mbar = m + 1.0;
    const double z = boost::math::quantile(boost::math::normal(), 0.5 + eta / 2);
    const double c = th.mu / mbar, sd = th.sigma / std::sqrt(mbar);
    return {c - z * sd, c + z * sd};
  }

  template <class Rng>
  double sample_latent(const Theta& th, int m, Rng& rng) const {
    const double mbar = m + 1.0;
    std::normal_distribution<double> d(th.mu / mbar, th.sigma / std::sqrt(mbar));
    return d(rng);
  }

  template <class Rng>
  Theta sample_prior(Rng& rng) const {
    std::gamma_distribution<double> g(h_.alpha, 1.0 / h_.beta);
    const double sigma = 1.0 / std::sqrt(g(rng));
    std::normal_distribution<double> n(h_.mu0, sigma / std::sqrt(h_.lambda));
    return {n(rng), sigma};
  }

  static Theta scalar_theta(double v) { return {0.0, v}; }
  static double theta_scalar(const Theta& t) { return t.sigma; }

  static void check(const Theta& th) {
    if (!(th.sigma > 0) || !std::isfinite(th.mu)) throw DomainError("normal: sigma must be positive");
  }

private:
  Hyper h_;
};

// ---------------------------------------------------------------------------
// Gamma marginals: latents Gamma(lambda/mbar, rate theta), theta ~ Gamma(alpha, beta).

struct GammaHyper {
  double lambda = 1;
  double alpha = 1;
  double beta = 1;
};

struct GammaTheta {
  double rate = 1;
};

class GammaFamily {
public:
  using Hyper = GammaHyper;
  using Theta = GammaTheta;
  static constexpr SupportClass support = SupportClass::nonneg_continuous;
  static constexpr const char* name = "gamma";

  explicit GammaFamily(Hyper h = {}) : h_(h) {
    require_positive(h_.lambda, "gamma: lambda");
    require_positive(h_.alpha, "gamma: alpha");
    require_positive(h_.beta, "gamma: beta");
  }

  const Hyper& hyper() const noexcept { return h_; }

  struct Stats {
    double tol = 0;
    std::size_t count = 0;
    double sum = 0;
    double sum_log = 0;
    bool feasible = true;
    void add(double y) noexcept {
      if (!(y >= -tol) || !std::isfinite(y)) {
        feasible = false;
        return;
      }
      // Values on the face y == 0 (within tolerance) are held at the
      // smallest normal double so the log term stays finite.
      y = std::max(y, std::numeric_limits<double>::min());
      ++count;
      sum += y;
      sum_log += std::log(y);
    }
  };

  Stats make_stats(int /*m*/, double tol = 0) const {
    Stats s;
    s.tol = tol;
    return s;
  }

  double log_marginal(const Stats& s, int m) const {
    if (!s.feasible) return kNegInf;
    const double lm = h_.lambda / (m + 1.0);
    const double N = static_cast<double>(s.count);
    const double a_post = h_.alpha + N * lm;
    return log_gamma(a_post) - log_gamma(h_.alpha) - N * log_gamma(lm) + h_.alpha * std::log(h_.beta) +
           (lm - 1) * s.sum_log - a_post * std::log(h_.beta + s.sum);
  }

  double latent_log_density(int m, const Theta& th, double y) const {
    check(th);
    if (!(y >= 0)) return kNegInf;
    const double lm = h_.lambda / (m + 1.0);
    if (y == 0) return lm < 1 ? kInf : (lm == 1 ? std::log(th.rate) : kNegInf);
    return lm * std::log(th.rate) - log_gamma(lm) + (lm - 1) * std::log(y) - th.rate * y;
  }

  /// Mode of Gamma(alpha + n lambda, beta + sum x); posterior mean when the
  /// shape is <= 1 and the mode sits on the boundary.
  Theta theta_hat(std::span<const double> x) const {
    if (x.empty()) throw DomainError("theta_hat: empty segment");
    const double a = h_.alpha + static_cast<double>(x.size()) * h_.lambda;
    const double b = h_.beta + std::accumulate(x.begin(), x.end(), 0.0);
    return {a > 1 ? (a - 1) / b : a / b};
  }

  double jump_variance(const Theta& th, int m) const {
    check(th);
    return h_.lambda / (m + 1.0) / (th.rate * th.rate);
  }

  double latent_mode(const Theta& th, int m) const {
    const double lm = h_.lambda / (m + 1.0);
    return lm > 1 ? (lm - 1) / th.rate : 0.0;
  }

  /// Central eta interval, or [0, q_eta] when the density is decreasing.
  Interval latent_interval(const Theta& th, int m, double eta) const {
    const double lm = h_.lambda / (m + 1.0);
    if (lm <= 1) return {0.0, boost::math::gamma_p_inv(lm, eta) / th.rate};
    return {boost::math::gamma_p_inv(lm, 0.5 - eta / 2) / th.rate, boost::math::gamma_p_inv(lm, 0.5 + eta / 2) / th.rate};
  }

  template <class Rng>
  double sample_latent(const Theta& th, int m, Rng& rng) const {
    std::gamma_distribution<double> d(h_.lambda / (m + 1.0), 1.0 / th.rate);
    return d(rng);
  }

  template <class Rng>
  Theta sample_prior(Rng& rng) const {
    std::gamma_distribution<double> g(h_.alpha, 1.0 / h_.beta);
    return {g(rng)};
  }

  static Theta scalar_theta(double v) { return {v}; }
  static double theta_scalar(const Theta& t) { return t.rate; }

  static void check(const Theta& th) {
    if (!(th.rate > 0) || !std::isfinite(th.rate)) throw DomainError("gamma: rate must be positive");
  }

private:
  Hyper h_;
};

// ---------------------------------------------------------------------------
// Negative binomial marginals: latents count successes (probability theta)
// before r/mbar failures, pmf C(y + r_m - 1, y) theta^y (1 - theta)^{r_m};
// theta ~ Beta(alpha, beta).

struct NegBinHyper {
  double r = 1;
  double alpha = 1;
  double beta = 1;
};

struct NegBinTheta {
  double prob = 0.5;
};

class NegBinFamily {
public:
  using Hyper = NegBinHyper;
  using Theta = NegBinTheta;
  static constexpr SupportClass support = SupportClass::nonneg_discrete;
  static constexpr const char* name = "negbin";

  explicit NegBinFamily(Hyper h = {}) : h_(h) {
    require_positive(h_.r, "negbin: r");
    require_positive(h_.alpha, "negbin: alpha");
    require_positive(h_.beta, "negbin: beta");
  }

  const Hyper& hyper() const noexcept { return h_; }

  struct Stats {
    double r_m = 1;
    double lg_r_m = 0;
    std::size_t count = 0;
    double sum = 0;
    double sum_terms = 0;
    bool feasible = true;
    void add(double y) noexcept {
      if (!(y >= 0) || !is_integral(y)) {
        feasible = false;
        return;
      }
      ++count;
      sum += y;
      sum_terms += log_gamma(y + r_m) - log_gamma(y + 1) - lg_r_m;
    }
  };

  Stats make_stats(int m, double /*tol*/ = 0) const {
    Stats s;
    s.r_m = h_.r / (m + 1.0);
    s.lg_r_m = log_gamma(s.r_m);
    return s;
  }

  double log_marginal(const Stats& s, int m) const {
    if (!s.feasible) return kNegInf;
    const double N = static_cast<double>(s.count);
    const double rm = h_.r / (m + 1.0);
    return log_beta(h_.alpha + s.sum, h_.beta + N * rm) - log_beta(h_.alpha, h_.beta) + s.sum_terms;
  }

  double latent_log_density(int m, const Theta& th, double y) const {
    check(th);
    if (!(y >= 0) || !is_integral(y)) return kNegInf;
    const double rm = h_.r / (m + 1.0);
    return log_gamma(y + rm) - log_gamma(y + 1) - log_gamma(rm) + y * std::log(th.prob) + rm * std::log1p(-th.prob);
  }

  /// Mode of Beta(alpha + sum x, beta + n r); posterior mean when either
  /// shape is <= 1 (mode on the boundary).
  Theta theta_hat(std::span<const double> x) const {
    if (x.empty()) throw DomainError("theta_hat: empty segment");
    const double a = h_.alpha + std::accumulate(x.begin(), x.end(), 0.0);
    const double b = h_.beta + static_cast<double>(x.size()) * h_.r;
    if (a > 1 && b > 1) return {(a - 1) / (a + b - 2)};
    return {a / (a + b)};
  }

  double jump_variance(const Theta& th, int m) const {
    check(th);
    const double rm = h_.r / (m + 1.0);
    return rm * th.prob / ((1 - th.prob) * (1 - th.prob));
  }

  double latent_mode(const Theta& th, int m) const {
    const double rm = h_.r / (m + 1.0);
    return rm > 1 ? std::floor((rm - 1) * th.prob / (1 - th.prob)) : 0.0;
  }

  template <class Rng>
  double sample_latent(const Theta& th, int m, Rng& rng) const {
    const double rm = h_.r / (m + 1.0);
    std::gamma_distribution<double> g(rm, th.prob / (1 - th.prob));
    const double rate = g(rng);
    if (!(rate > 0)) return 0.0;
    std::poisson_distribution<long long> p(rate);
    return static_cast<double>(p(rng));
  }

  template <class Rng>
  Theta sample_prior(Rng& rng) const {
    std::gamma_distribution<double> ga(h_.alpha, 1.0), gb(h_.beta, 1.0);
    const double a = ga(rng), b = gb(rng);
    return {a / (a + b)};
  }

  static Theta scalar_theta(double v) { return {v}; }
  static double theta_scalar(const Theta& t) { return t.prob; }

  static void check(const Theta& th) {
    if (!(th.prob > 0 && th.prob < 1)) throw DomainError("negbin: theta must lie in (0, 1)");
  }

private:
  Hyper h_;
};

using FamilySpec = std::variant<NormalFamily, GammaFamily, NegBinFamily>;

template <class Family>
concept SegmentFamily = requires(const Family& f, std::span<const double> x, int m, typename Family::Theta th) {
  { Family::support } -> std::convertible_to<SupportClass>;
  { f.make_stats(m, 0.0) };
  { f.theta_hat(x) } -> std::same_as<typename Family::Theta>;
  { f.jump_variance(th, m) } -> std::convertible_to<double>;
  { f.latent_mode(th, m) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------

/// log L(x_{1:n}, gamma_{1:m} | m): theta integrated out against its conjugate
/// prior. -inf when some reconstructed latent falls outside the support.
template <SegmentFamily Family>
double joint_loglik(const Family& f, std::span<const double> x, std::span<const double> gamma, double tol) {
  const int m = static_cast<int>(gamma.size());
  auto stats = f.make_stats(m, tol);
  visit_latents(x, gamma, [&](double y) { stats.add(y); });
  return f.log_marginal(stats, m);
}

template <SegmentFamily Family>
double joint_loglik(const Family& f, std::span<const double> x, std::span<const double> gamma) {
  return joint_loglik(f, x, gamma, membership_tolerance(x, Family::support));
}

/// Same quantity with the latents anchored at a window y_{u-m+1..u} instead of gamma.
template <SegmentFamily Family>
double joint_loglik_anchored(const Family& f, std::span<const double> x, std::span<const double> window,
                             std::ptrdiff_t offset) {
  const auto gamma = shift_map(x, window, offset, -offset);
  return joint_loglik(f, x, gamma);
}

// ---------------------------------------------------------------------------
// Constrained mode of prod_r f(gamma_r) over {gamma_r >= lower_r, sum <= budget}
// for a common log-concave (or decreasing) latent density with the given mode.
// The optimum is gamma_r = max(lower_r, c) for a common level c.

inline std::vector<double> waterfill(std::span<const double> lower, double budget, double mode) {
  const std::size_t m = lower.size();
  std::vector<double> out(m);
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) total += (out[i] = std::max(lower[i], mode));
  if (total <= budget) return out;
  std::vector<double> sorted(lower.begin(), lower.end());
  std::sort(sorted.begin(), sorted.end());
  double tail = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  double level = sorted.empty() ? 0 : sorted.front();
  for (std::size_t k = 1; k <= m; ++k) {
    tail -= sorted[k - 1];
    const double c = (budget - tail) / static_cast<double>(k);
    if (k == m || c <= sorted[k]) {
      level = std::max(c, sorted.front());
      break;
    }
  }
  for (std::size_t i = 0; i < m; ++i) out[i] = std::max(lower[i], level);
  return out;
}

/// Integer version: exact for log-concave pmfs (ties to lower indices).
inline std::vector<double> waterfill_integer(std::span<const double> lower, double budget, double mode) {
  const std::size_t m = lower.size();
  std::vector<long long> lo(m);
  for (std::size_t i = 0; i < m; ++i) lo[i] = std::llround(lower[i]);
  const long long B = std::llround(std::floor(budget + 1e-9));
  const long long md = std::llround(mode);
  std::vector<double> out(m);
  long long total = 0;
  for (std::size_t i = 0; i < m; ++i) total += std::max(lo[i], md);
  if (total <= B) {
    for (std::size_t i = 0; i < m; ++i) out[i] = static_cast<double>(std::max(lo[i], md));
    return out;
  }
  std::vector<long long> sorted = lo;
  std::sort(sorted.begin(), sorted.end());
  long long tail = std::accumulate(sorted.begin(), sorted.end(), 0LL);
  long long level = sorted.empty() ? 0 : sorted.front();
  for (std::size_t k = 1; k <= m; ++k) {
    tail -= sorted[k - 1];
    const long long rem = B - tail;
    const long long kk = static_cast<long long>(k);
    if (k == m || rem <= kk * sorted[k]) {
      // floor division, rem may be negative only if sum(lower) > budget
      level = rem >= 0 ? rem / kk : -((-rem + kk - 1) / kk);
      level = std::max(level, sorted.front());
      break;
    }
  }
  long long used = 0;
  for (std::size_t i = 0; i < m; ++i) used += std::max(lo[i], level);
  long long slack = B - used;
  for (std::size_t i = 0; i < m; ++i) {
    long long v = std::max(lo[i], level);
    if (slack > 0 && lo[i] <= level) {
      ++v;
      --slack;
    }
    out[i] = static_cast<double>(v);
  }
  return out;
}

/// Maximiser of prod_r f_{m'}(gamma_r | theta_hat) over Y_{m'}(x).
template <SegmentFamily Family>
LatentState gamma_star(const Family& f, std::span<const double> x, int m_prime, const typename Family::Theta& th) {
  if (m_prime < 0) throw DomainError("gamma_star: negative order");
  if (m_prime == 0) return {};
  const double mode = f.latent_mode(th, m_prime);
  if constexpr (!is_bounded(Family::support)) {
    return LatentState(std::vector<double>(static_cast<std::size_t>(m_prime), mode));
  } else {
    const auto b = compute_bounds(x, m_prime);
    if (b.slack < -membership_tolerance(x, Family::support))
      throw DomainError("gamma_star: order " + std::to_string(m_prime) + " is not feasible for this segment");
    if constexpr (is_discrete(Family::support)) return LatentState(waterfill_integer(b.lower, b.upper, mode));
    else return LatentState(waterfill(b.lower, b.upper, mode));
  }
}

template <SegmentFamily Family>
typename Family::Theta theta_hat(const Family& f, std::span<const double> x) {
  return f.theta_hat(x);
}

template <SegmentFamily Family>
double jump_variance_g(const Family& f, const typename Family::Theta& th, int m) {
  return f.jump_variance(th, m);
}

} // namespace mvsum
