#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mvsum/errors.hpp"
#include "mvsum/evaluation.hpp"
#include "mvsum/families.hpp"
#include "mvsum/rng.hpp"
#include "mvsum/series_space.hpp"
#include "mvsum/trace.hpp"

namespace mvsum {

enum class InitMode { standard, cold, random };

inline const char* to_string(InitMode m) noexcept {
  switch (m) {
  case InitMode::standard: return "standard";
  case InitMode::cold: return "cold";
  case InitMode::random: return "random";
  }
  return "?";
}

struct MoveProbabilities {
  double shift = 0.3;
  double param = 0.4;
  double birth = 0.15;
  double death = 0.15;
};

struct SamplerConfig {
  MoveProbabilities moves;
  /// Changepoint prior rate; unset means 1/T.
  std::optional<double> p;
  double rho = 0.1;
  int m_max = 30;
  int grid_size = 100;
  double eta = 0.99;
  std::size_t iterations = 50000;
  std::size_t burn_in = 10000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  int n_chains = 1;
  /// Pins every m_j to 0 (the exchangeable baseline).
  bool standard = false;
  InitMode init = InitMode::standard;
  /// Iterations of the m = 0 warm-up used by InitMode::standard.
  std::size_t init_iterations = 5000;
  int random_init_k_max = 20;
  bool record_path = false;
  std::size_t audit_every = 1000;

  double p_for(std::size_t T) const noexcept { return p ? *p : (T >= 2 ? 1.0 / static_cast<double>(T) : 0.5); }

  void validate(std::size_t T) const {
    const double probs[] = {moves.shift, moves.param, moves.birth, moves.death};
    double sum = 0;
    for (double v : probs) {
      if (!(v >= 0)) throw ConfigError("move probabilities must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1) > 1e-9) throw ConfigError("move probabilities must sum to 1");
    const double pp = p_for(T);
    if (!(pp > 0 && pp < 1)) throw ConfigError("p must lie in (0, 1)");
    if (!(rho > 0 && rho < 1)) throw ConfigError("rho must lie in (0, 1)");
    if (m_max < 0) throw ConfigError("m_max must be non-negative");
    if (grid_size < 2) throw ConfigError("grid size N must be >= 2");
    if (!(eta > 0 && eta < 1)) throw ConfigError("eta must lie in (0, 1)");
    if (thin < 1) throw ConfigError("thin must be >= 1");
    if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (random_init_k_max < 0) throw ConfigError("random_init_k_max must be non-negative");
  }
};

namespace detail {

inline std::size_t sample_log_categorical(std::span<const double> logw, double total, CounterRng& rng) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < logw.size(); ++i) {
    u -= std::exp(logw[i] - total);
    if (u < 0) return i;
  }
  // Rounding can leave a sliver of mass; return the last supported entry.
  for (std::size_t i = logw.size(); i-- > 0;)
    if (std::isfinite(logw[i])) return i;
  throw InvariantError("categorical draw over an empty support");
}

/// Piecewise-constant proposal on [lo, hi] with N equal bins whose heights are
/// the target evaluated at the bin midpoints.
struct StepDensity {
  double lo = 0;
  double hi = 0;
  std::vector<double> logw;
  double log_total = kNegInf;

  template <class Eval>
  static StepDensity build(double lo, double hi, int bins, Eval&& eval) {
    StepDensity d;
    d.lo = lo;
    d.hi = hi;
    if (!(hi > lo)) {
      d.log_total = 0;
      return d;
    }
    const double w = (hi - lo) / bins;
    d.logw.resize(static_cast<std::size_t>(bins));
    for (int i = 0; i < bins; ++i) d.logw[static_cast<std::size_t>(i)] = eval(lo + (i + 0.5) * w);
    d.log_total = log_sum_exp(d.logw);
    if (!std::isfinite(d.log_total)) throw InvariantError("step proposal has no finite bin");
    return d;
  }

  bool degenerate() const noexcept { return logw.empty(); }

  double sample(CounterRng& rng) const {
    if (degenerate()) return lo;
    const std::size_t i = sample_log_categorical(logw, log_total, rng);
    const double w = (hi - lo) / static_cast<double>(logw.size());
    return lo + (static_cast<double>(i) + rng.uniform()) * w;
  }

  double log_density(double v) const {
    if (degenerate()) return v == lo ? 0.0 : kNegInf;
    if (!(v >= lo && v <= hi)) return kNegInf;
    const double w = (hi - lo) / static_cast<double>(logw.size());
    const auto i = std::min(logw.size() - 1, static_cast<std::size_t>((v - lo) / w));
    return logw[i] - log_total - std::log(w);
  }
};

/// Step proposal mixed with a small heavy-tailed component so that every
/// feasible value has positive density: uniform on [lo, hi] when both ends
/// are finite, Cauchy(center, scale) on the real line otherwise.
struct DefensiveDensity {
  static constexpr double kWeight = 0.05;

  StepDensity step;
  double lo = kNegInf;
  double hi = kInf;
  double center = 0;
  double scale = 1;

  bool finite_range() const noexcept { return std::isfinite(lo) && std::isfinite(hi); }
  bool point_mass() const noexcept { return finite_range() && !(hi > lo); }
  double weight() const noexcept { return step.degenerate() ? 1.0 : kWeight; }

  double tail_log_density(double v) const {
    if (finite_range()) return v >= lo && v <= hi ? -std::log(hi - lo) : kNegInf;
    const double z = (v - center) / scale;
    return -std::log(std::numbers::pi * scale) - std::log1p(z * z);
  }

  double sample(CounterRng& rng) const {
    if (point_mass()) return lo;
    if (rng.uniform() >= weight()) return step.sample(rng);
    const double u = rng.uniform();
    if (finite_range()) return lo + u * (hi - lo);
    return center + scale * std::tan(std::numbers::pi * (u - 0.5));
  }

  double log_density(double v) const {
    if (point_mass()) return v == lo ? 0.0 : kNegInf;
    const double t = std::log(weight()) + tail_log_density(v);
    if (step.degenerate()) return t;
    const double s = std::log1p(-kWeight) + step.log_density(v);
    return log_sum_exp(std::array<double, 2>{s, t});
  }
};

} // namespace detail

/// Reversible-jump sampler over (k, tau, {m_j, gamma_j}) with theta integrated out.
template <SegmentFamily Family>
class Sampler {
public:
  using Theta = typename Family::Theta;

  struct Proposal {
    bool available = false;
    /// Set by moves that perform their own exact or MH updates internally.
    bool resolved = false;
    bool changed = false;
    /// Birth/death only: whether the left segment donated its latents.
    bool left_donor = false;
    ChainState state;
    double log_ratio = kNegInf;
  };

  Sampler(std::span<const double> x, Family f, SamplerConfig cfg, std::uint64_t stream = 0)
      : x_(x.begin(), x.end()), f_(std::move(f)), cfg_(std::move(cfg)), stream_(stream),
        rng_(cfg_.seed, 2 * stream + 1) {
    if (x_.empty()) throw DataError("series is empty");
    ObservedSeries{x_, Family::support}.validate();
    cfg_.validate(x_.size());
    T_ = static_cast<int>(x_.size());
    const double p = cfg_.p_for(x_.size());
    log_p_ = std::log(p);
    log_1mp_ = std::log1p(-p);
    jump_prefix_.assign(x_.size() + 1, 0.0);
    for (std::size_t t = 1; t < x_.size(); ++t) {
      const double d = x_[t] - x_[t - 1];
      jump_prefix_[t + 1] = jump_prefix_[t] + d * d;
    }
    auto mp = cfg_.moves;
    if (cfg_.standard) mp.param = 0;
    const double s = mp.shift + mp.param + mp.birth + mp.death;
    if (!(s > 0)) throw ConfigError("no move has positive probability");
    probs_ = {mp.shift / s, mp.param / s, mp.birth / s, mp.death / s};
    set_state(cold_state());
  }

  int T() const noexcept { return T_; }
  std::span<const double> data() const noexcept { return x_; }
  const Family& family() const noexcept { return f_; }
  const SamplerConfig& config() const noexcept { return cfg_; }
  const ChainState& state() const noexcept { return state_; }
  CounterRng& rng() noexcept { return rng_; }
  std::size_t iteration() const noexcept { return iter_; }

  int seg_start(const ChainState& s, std::size_t j) const { return j == 0 ? 1 : s.tau[j - 1]; }
  int seg_end(const ChainState& s, std::size_t j) const { return j < s.tau.size() ? s.tau[j] - 1 : T_; }

  std::span<const double> segment_data(int a, int b) const {
    return std::span<const double>(x_).subspan(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - a + 1));
  }

  double log_prior_m(int m) const {
    if (cfg_.standard) return m == 0 ? 0.0 : kNegInf;
    return std::log(cfg_.rho) + m * std::log1p(-cfg_.rho);
  }

  double log_prior_k(int k) const {
    double v = 0;
    if (k > 0) v += k * log_p_;
    if (T_ - 1 - k > 0) v += (T_ - 1 - k) * log_1mp_;
    return v;
  }

  double segment_loglik(int a, int b, std::span<const double> gamma) const {
    const auto xs = segment_data(a, b);
    return joint_loglik(f_, xs, gamma, membership_tolerance(xs, Family::support));
  }

  /// Fills per-segment log-likelihoods and the total from scratch.
  void evaluate(ChainState& s) const {
    if (s.segments.size() != s.tau.size() + 1) throw InvariantError("segment count must equal k + 1");
    for (std::size_t i = 0; i < s.tau.size(); ++i) {
      if (s.tau[i] < 2 || s.tau[i] > T_ || (i > 0 && s.tau[i] <= s.tau[i - 1]))
        throw InvariantError("changepoints must be strictly increasing within 2..T");
    }
    double total = log_prior_k(s.k());
    for (std::size_t j = 0; j < s.segments.size(); ++j) {
      auto& seg = s.segments[j];
      if (seg.m != static_cast<int>(seg.gamma.size())) throw InvariantError("gamma length must equal m");
      seg.loglik = segment_loglik(seg_start(s, j), seg_end(s, j), seg.gamma);
      total += log_prior_m(seg.m) + seg.loglik;
    }
    s.log_target = total;
  }

  double total_log_target(const ChainState& s) const {
    double total = log_prior_k(s.k());
    for (const auto& seg : s.segments) total += log_prior_m(seg.m) + seg.loglik;
    return total;
  }

  void set_state(ChainState s) {
    evaluate(s);
    if (!std::isfinite(s.log_target)) throw InvariantError("state has zero posterior density");
    state_ = std::move(s);
  }

  ChainState cold_state() const {
    ChainState s;
    s.segments.resize(1);
    return s;
  }

  /// State with the given changepoints and every m_j = 0.
  ChainState exchangeable_state(std::vector<int> tau) const {
    ChainState s;
    s.tau = std::move(tau);
    s.segments.resize(s.tau.size() + 1);
    evaluate(s);
    return s;
  }

  // --- per-segment cached quantities -------------------------------------

  const Theta& theta_of(int a, int b) {
    auto& in = info(a, b);
    if (!in.has_theta) {
      in.theta = f_.theta_hat(segment_data(a, b));
      in.has_theta = true;
    }
    return in.theta;
  }

  const SegmentBounds& bounds_of(int a, int b, int m) {
    auto& in = info(a, b);
    auto it = in.bounds.find(m);
    if (it == in.bounds.end()) it = in.bounds.emplace(m, compute_bounds(segment_data(a, b), m)).first;
    return it->second;
  }

  Interval interval_of(int a, int b, int m) {
    auto& in = info(a, b);
    auto it = in.intervals.find(m);
    if (it == in.intervals.end()) {
      Interval iv;
      if constexpr (!is_discrete(Family::support)) iv = f_.latent_interval(theta_of(a, b), m, cfg_.eta);
      it = in.intervals.emplace(m, iv).first;
    }
    return it->second;
  }

  /// Normalised log q(m' | jumps) over {0..m_max} intersected with M.
  const std::vector<double>& order_proposal(int a, int b) {
    auto& in = info(a, b);
    if (!in.log_q.empty()) return in.log_q;
    if (cfg_.standard) {
      in.log_q = {0.0};
      return in.log_q;
    }
    const auto xs = segment_data(a, b);
    const double tol = membership_tolerance(xs, Family::support);
    const Theta th = theta_of(a, b);
    const double jumps = static_cast<double>(b - a);
    const double ss = jump_prefix_[static_cast<std::size_t>(b)] - jump_prefix_[static_cast<std::size_t>(a)];
    std::vector<double> lq(static_cast<std::size_t>(cfg_.m_max) + 1, kNegInf);
    for (int m = 0; m <= cfg_.m_max; ++m) {
      if (is_bounded(Family::support) && m > 0 && bounds_of(a, b, m).slack < -tol) continue;
      const double g = f_.jump_variance(th, m);
      lq[static_cast<std::size_t>(m)] =
          -0.5 * jumps * std::log(4 * std::numbers::pi * g) - ss / (4 * g) + std::log(cfg_.rho) + m * std::log1p(-cfg_.rho);
    }
    const double z = log_sum_exp(lq);
    for (auto& v : lq) v -= z;
    in.log_q = std::move(lq);
    return info(a, b).log_q;
  }

  double order_log_prob(int a, int b, int m) {
    const auto& lq = order_proposal(a, b);
    return m >= 0 && static_cast<std::size_t>(m) < lq.size() ? lq[static_cast<std::size_t>(m)] : kNegInf;
  }

  /// Draws gamma for order m on [a, b] coordinate by coordinate; returns the
  /// draw and its log proposal density.
  std::pair<std::vector<double>, double> draw_gamma(int a, int b, int m) {
    std::vector<double> out;
    const double lq = gamma_mechanism(a, b, m, out, nullptr);
    return {std::move(out), lq};
  }

  /// Log density of the same mechanism at a given gamma.
  double gamma_log_density(int a, int b, int m, std::span<const double> gamma) {
    std::vector<double> out;
    std::vector<double> target(gamma.begin(), gamma.end());
    return gamma_mechanism(a, b, m, out, &target);
  }

  // --- moves ---------------------------------------------------------------

  Proposal propose_shift() {
    Proposal p;
    const auto& s = state_;
    const int k = s.k();
    if (k == 0) return p;
    p.available = true;
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, k - 1));
    const int lo = seg_start(s, j) + 1;
    const int hi = (j + 1 < s.tau.size() ? s.tau[j + 1] : T_ + 1) - 1;
    const int np = static_cast<int>(rng_.uniform_int(lo, hi));
    const int u = np - s.tau[j];
    p.state = s;
    if (u == 0) {
      p.log_ratio = 0;
      return p;
    }
    p.changed = true;
    auto& left = p.state.segments[j];
    auto& right = p.state.segments[j + 1];
    right.gamma = shift_map(x_, right.gamma, s.tau[j] - 1, u);
    p.state.tau[j] = np;
    left.loglik = segment_loglik(seg_start(p.state, j), seg_end(p.state, j), left.gamma);
    right.loglik = segment_loglik(seg_start(p.state, j + 1), seg_end(p.state, j + 1), right.gamma);
    p.state.log_target = total_log_target(p.state);
    p.log_ratio = p.state.log_target - s.log_target;
    if (std::isnan(p.log_ratio)) p.log_ratio = kNegInf;
    return p;
  }

  Proposal propose_update_gamma(std::size_t j) {
    Proposal p;
    const auto& seg = state_.segments.at(j);
    if (seg.m == 0) return p;
    p.available = true;
    p.resolved = true;
    p.state = state_;
    const int a = seg_start(state_, j), b = seg_end(state_, j);
    auto& target = p.state.segments[j];
    const int m = seg.m;
    const auto& bd = bounds_of(a, b, m);
    auto g = target.gamma;
    double current = target.loglik;
    if constexpr (is_discrete(Family::support)) {
      std::vector<double> lw;
      for (int r = 0; r < m; ++r) {
        const double lo = bd.lower[static_cast<std::size_t>(r)];
        const double rest = std::accumulate(g.begin(), g.end(), 0.0) - g[static_cast<std::size_t>(r)];
        const double hi = bd.upper - rest;
        if (hi < lo) throw InvariantError("empty Gibbs range for gamma");
        const auto count = static_cast<std::size_t>(hi - lo) + 1;
        lw.assign(count, kNegInf);
        for (std::size_t i = 0; i < count; ++i) {
          g[static_cast<std::size_t>(r)] = lo + static_cast<double>(i);
          lw[i] = segment_loglik(a, b, g);
        }
        const double z = log_sum_exp(lw);
        if (!std::isfinite(z)) throw InvariantError("Gibbs full conditional has no support");
        const auto pick = detail::sample_log_categorical(lw, z, rng_);
        g[static_cast<std::size_t>(r)] = lo + static_cast<double>(pick);
        current = lw[pick];
      }
    } else {
      const Interval star = interval_of(a, b, m);
      for (int r = 0; r < m; ++r) {
        const auto ri = static_cast<std::size_t>(r);
        double lo = kNegInf, hi = kInf;
        if constexpr (is_bounded(Family::support)) {
          lo = bd.lower[ri];
          hi = bd.upper - (std::accumulate(g.begin(), g.end(), 0.0) - g[ri]);
        }
        const double c = g[ri];
        auto eval = [&](double v) {
          auto h = g;
          h[ri] = v;
          return segment_loglik(a, b, h);
        };
        const auto [flo, fhi] = hull(clip(star, lo, hi), c);
        const auto fwd = detail::StepDensity::build(flo, fhi, cfg_.grid_size, eval);
        if (fwd.degenerate()) continue;
        const double v = fwd.sample(rng_);
        const double lnew = eval(v);
        const auto [rlo, rhi] = hull(clip(star, lo, hi), v);
        double log_rev;
        if (rlo == flo && rhi == fhi) log_rev = fwd.log_density(c);
        else log_rev = detail::StepDensity::build(rlo, rhi, cfg_.grid_size, eval).log_density(c);
        const double ratio = lnew - current + log_rev - fwd.log_density(v);
        if (!std::isnan(ratio) && std::log(rng_.uniform()) < ratio) {
          g[ri] = v;
          current = lnew;
          p.changed = true;
        }
      }
    }
    if constexpr (is_discrete(Family::support)) p.changed = g != target.gamma;
    target.gamma = std::move(g);
    target.loglik = current;
    p.state.log_target = total_log_target(p.state);
    p.log_ratio = 0;
    return p;
  }

  Proposal propose_update_m(std::size_t j) {
    Proposal p;
    p.available = true;
    p.state = state_;
    const auto& seg = state_.segments.at(j);
    const int a = seg_start(state_, j), b = seg_end(state_, j);
    const auto& lq = order_proposal(a, b);
    const int m_new = static_cast<int>(detail::sample_log_categorical(lq, 0.0, rng_));
    auto [g_new, lq_g_new] = draw_gamma(a, b, m_new);
    const double rev_m = order_log_prob(a, b, seg.m);
    if (!std::isfinite(rev_m)) return p;
    const double rev_g = gamma_log_density(a, b, seg.m, seg.gamma);
    auto& target = p.state.segments[j];
    target.m = m_new;
    target.gamma = std::move(g_new);
    target.loglik = segment_loglik(a, b, target.gamma);
    p.changed = true;
    p.state.log_target = total_log_target(p.state);
    p.log_ratio = p.state.log_target - state_.log_target + rev_m + rev_g - lq[static_cast<std::size_t>(m_new)] - lq_g_new;
    if (std::isnan(p.log_ratio)) p.log_ratio = kNegInf;
    return p;
  }

  Proposal propose_birth() {
    Proposal p;
    const auto& s = state_;
    const int k = s.k();
    const int free_sites = T_ - 1 - k;
    if (free_sites <= 0) return p;
    p.available = true;
    // Locate the idx-th free site among {2..T} \ tau, walking the segments.
    auto idx = static_cast<int>(rng_.uniform_int(0, free_sites - 1));
    std::size_t j = 0;
    for (;; ++j) {
      const int avail = seg_end(s, j) - seg_start(s, j);
      if (idx < avail) break;
      idx -= avail;
    }
    const int a = seg_start(s, j), b = seg_end(s, j);
    const int site = a + 1 + idx;
    const double nl = site - a, nr = b - site + 1;
    const bool left_donor = rng_.uniform() < nl / (nl + nr);
    p.left_donor = left_donor;
    const auto& donor = s.segments[j];
    SegmentState left, right;
    double log_q_new;
    if (left_donor) {
      left = donor;
      right.m = static_cast<int>(detail::sample_log_categorical(order_proposal(site, b), 0.0, rng_));
      auto [g, lg] = draw_gamma(site, b, right.m);
      right.gamma = std::move(g);
      log_q_new = order_log_prob(site, b, right.m) + lg;
    } else {
      right.m = donor.m;
      right.gamma = shift_map(x_, donor.gamma, a - 1, site - a);
      left.m = static_cast<int>(detail::sample_log_categorical(order_proposal(a, site - 1), 0.0, rng_));
      auto [g, lg] = draw_gamma(a, site - 1, left.m);
      left.gamma = std::move(g);
      log_q_new = order_log_prob(a, site - 1, left.m) + lg;
    }
    left.loglik = segment_loglik(a, site - 1, left.gamma);
    right.loglik = segment_loglik(site, b, right.gamma);
    p.state = s;
    p.state.tau.insert(p.state.tau.begin() + static_cast<std::ptrdiff_t>(j), site);
    p.state.segments[j] = std::move(left);
    p.state.segments.insert(p.state.segments.begin() + static_cast<std::ptrdiff_t>(j) + 1, std::move(right));
    p.state.log_target = total_log_target(p.state);
    p.changed = true;
    p.log_ratio = p.state.log_target - s.log_target + std::log(probs_[3] / probs_[2]) + std::log(static_cast<double>(free_sites)) -
                  std::log(static_cast<double>(k + 1)) - log_q_new;
    if (std::isnan(p.log_ratio)) p.log_ratio = kNegInf;
    return p;
  }

  Proposal propose_death() {
    Proposal p;
    const auto& s = state_;
    const int k = s.k();
    if (k == 0) return p;
    p.available = true;
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, k - 1));
    const int a = seg_start(s, j), site = s.tau[j], b = seg_end(s, j + 1);
    const double nl = site - a, nr = b - site + 1;
    const bool left_donor = rng_.uniform() < nl / (nl + nr);
    p.left_donor = left_donor;
    const auto& L = s.segments[j];
    const auto& R = s.segments[j + 1];
    SegmentState merged;
    double log_q_disc;
    if (left_donor) {
      merged.m = L.m;
      merged.gamma = L.gamma;
      log_q_disc = order_log_prob(site, b, R.m);
      if (std::isfinite(log_q_disc)) log_q_disc += gamma_log_density(site, b, R.m, R.gamma);
    } else {
      merged.m = R.m;
      merged.gamma = shift_map(x_, R.gamma, site - 1, -(site - a));
      log_q_disc = order_log_prob(a, site - 1, L.m);
      if (std::isfinite(log_q_disc)) log_q_disc += gamma_log_density(a, site - 1, L.m, L.gamma);
    }
    merged.loglik = segment_loglik(a, b, merged.gamma);
    p.state = s;
    p.state.tau.erase(p.state.tau.begin() + static_cast<std::ptrdiff_t>(j));
    p.state.segments[j] = std::move(merged);
    p.state.segments.erase(p.state.segments.begin() + static_cast<std::ptrdiff_t>(j) + 1);
    p.state.log_target = total_log_target(p.state);
    p.changed = true;
    p.log_ratio = p.state.log_target - s.log_target + std::log(probs_[2] / probs_[3]) + std::log(static_cast<double>(k)) -
                  std::log(static_cast<double>(T_ - k)) + log_q_disc;
    if (std::isnan(p.log_ratio)) p.log_ratio = kNegInf;
    return p;
  }

  /// One iteration: pick a move, compute its acceptance ratio, accept or reject.
  MoveRecord step() {
    if (cache_.size() > kCacheLimit) cache_.clear();
    MoveRecord rec;
    const double u = rng_.uniform();
    Proposal prop;
    if (u < probs_[0]) {
      rec.type = MoveType::shift;
      prop = propose_shift();
    } else if (u < probs_[0] + probs_[1]) {
      const auto j = static_cast<std::size_t>(rng_.uniform_int(0, state_.k()));
      if (rng_.uniform() < 0.5) {
        rec.type = MoveType::update_gamma;
        prop = propose_update_gamma(j);
      } else {
        rec.type = MoveType::update_m;
        prop = propose_update_m(j);
      }
    } else if (u < probs_[0] + probs_[1] + probs_[2]) {
      rec.type = MoveType::birth;
      prop = propose_birth();
    } else {
      rec.type = MoveType::death;
      prop = propose_death();
    }
    rec.available = prop.available;
    auto& counts = counts_[static_cast<std::size_t>(rec.type)];
    ++counts.proposed;
    if (!prop.available) {
      ++counts.unavailable;
    } else {
      rec.log_ratio = prop.log_ratio;
      bool accept = prop.resolved;
      if (!accept) {
        const double v = rng_.uniform();
        accept = std::log(v) < prop.log_ratio;
      }
      if (accept) {
        ++counts.accepted;
        rec.accepted = true;
        if (prop.changed) {
          if (!std::isfinite(prop.state.log_target))
            throw InvariantError("accepted a state with non-finite target density");
          state_ = std::move(prop.state);
        }
      }
    }
    rec.k_after = state_.k();
    ++iter_;
    if (cfg_.audit_every > 0 && iter_ % cfg_.audit_every == 0) audit();
    return rec;
  }

  /// Recomputes every cached quantity of the current state and checks feasibility.
  void audit() const {
    ChainState fresh = state_;
    evaluate(fresh);
    for (std::size_t j = 0; j < fresh.segments.size(); ++j) {
      const double want = fresh.segments[j].loglik, have = state_.segments[j].loglik;
      if (!(std::abs(want - have) <= 1e-9 * std::max(1.0, std::abs(want))))
        throw InvariantError("cached segment log-likelihood drifted at iteration " + std::to_string(iter_));
      const auto xs = segment_data(seg_start(state_, j), seg_end(state_, j));
      const auto& g = state_.segments[j].gamma;
      if (!g.empty() && !within_bounds(compute_bounds(xs, static_cast<int>(g.size())), g, Family::support,
                                       membership_tolerance(xs, Family::support)))
        throw InvariantError("segment gamma left its feasible set at iteration " + std::to_string(iter_));
    }
    if (!(std::abs(fresh.log_target - state_.log_target) <= 1e-9 * std::max(1.0, std::abs(fresh.log_target))))
      throw InvariantError("cached target density drifted at iteration " + std::to_string(iter_));
  }

  /// Sets the starting state according to cfg.init.
  void initialize() {
    switch (cfg_.init) {
    case InitMode::cold: set_state(cold_state()); break;
    case InitMode::random: set_state(random_state()); break;
    case InitMode::standard: {
      if (cfg_.init_iterations == 0 || cfg_.standard) {
        set_state(cold_state());
        break;
      }
      SamplerConfig warm = cfg_;
      warm.standard = true;
      warm.init = InitMode::cold;
      warm.burn_in = 0;
      warm.iterations = cfg_.init_iterations;
      warm.thin = 1;
      warm.record_path = false;
      Sampler<Family> pilot(x_, f_, warm, 0);
      pilot.rng_ = CounterRng(cfg_.seed, 2 * stream_ + 2);
      std::vector<ChainState> states;
      states.reserve(warm.iterations);
      for (std::size_t i = 0; i < warm.iterations; ++i) {
        pilot.step();
        states.push_back(pilot.state());
      }
      set_state(exchangeable_state(map_estimate(states).tau_hat));
      break;
    }
    }
  }

  ChainState random_state() {
    const int kmax = std::min(cfg_.random_init_k_max, T_ - 1);
    const int k = static_cast<int>(rng_.uniform_int(0, kmax));
    std::vector<int> sites(static_cast<std::size_t>(T_ - 1));
    std::iota(sites.begin(), sites.end(), 2);
    for (int i = 0; i < k; ++i) {
      const auto pick = static_cast<std::size_t>(rng_.uniform_int(i, T_ - 2));
      std::swap(sites[static_cast<std::size_t>(i)], sites[pick]);
    }
    std::vector<int> tau(sites.begin(), sites.begin() + k);
    std::sort(tau.begin(), tau.end());
    return exchangeable_state(std::move(tau));
  }

  /// Burn-in plus retained iterations from the current state.
  ChainTrace run_from_current() {
    ChainTrace tr;
    tr.T = T_;
    tr.seed = cfg_.seed;
    tr.stream = stream_;
    tr.initial = state_;
    const std::size_t total = cfg_.burn_in + cfg_.iterations;
    tr.moves.reserve(total);
    tr.k_path.reserve(total + 1);
    tr.k_path.push_back(state_.k());
    if (cfg_.record_path) tr.tau_path.push_back(state_.tau);
    for (std::size_t it = 0; it < total; ++it) {
      tr.moves.push_back(step());
      tr.k_path.push_back(state_.k());
      if (cfg_.record_path) tr.tau_path.push_back(state_.tau);
      if (it >= cfg_.burn_in && (it - cfg_.burn_in) % cfg_.thin == 0) {
        tr.samples.push_back(state_);
        tr.sample_iterations.push_back(it + 1);
      }
    }
    tr.counts = counts_;
    return tr;
  }

  ChainTrace run() {
    initialize();
    return run_from_current();
  }

  const std::array<MoveCounts, kMoveTypes>& counts() const noexcept { return counts_; }
  double move_probability(std::size_t i) const noexcept { return probs_[i]; }

private:
  struct SegmentInfo {
    bool has_theta = false;
    Theta theta{};
    std::vector<double> log_q;
    std::unordered_map<int, SegmentBounds> bounds;
    std::unordered_map<int, Interval> intervals;
  };

  static constexpr std::size_t kCacheLimit = 20000;

  SegmentInfo& info(int a, int b) {
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    return cache_[key];
  }

  static Interval clip(const Interval& iv, double lo, double hi) {
    if (iv.hi < lo) return {lo, lo};
    if (iv.lo > hi) return {hi, hi};
    return {std::max(iv.lo, lo), std::min(iv.hi, hi)};
  }

  static std::pair<double, double> hull(const Interval& iv, double c) { return {std::min(iv.lo, c), std::max(iv.hi, c)}; }

  /// Completion of coordinates after r: where later coordinates sit while
  /// coordinate r is being proposed.
  std::vector<double> completion(std::span<const double> lower, double budget, double mode) const {
    if constexpr (is_discrete(Family::support)) {
      return waterfill_integer(lower, budget, mode);
    } else {
      auto out = waterfill(lower, budget, mode);
      const double slack = budget - std::accumulate(lower.begin(), lower.end(), 0.0);
      const double share = std::max(slack, 0.0) / static_cast<double>(lower.size() + 1);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * out[i] + 0.5 * (lower[i] + share);
      return out;
    }
  }

  /// Sequential construction shared by update_m, birth and death. Samples
  /// into `out` when `target` is null, otherwise evaluates the density of
  /// `target`. Returns the log proposal density.
  double gamma_mechanism(int a, int b, int m, std::vector<double>& out, const std::vector<double>* target) {
    out.clear();
    if (m == 0) return 0.0;
    if (target && static_cast<int>(target->size()) != m) return kNegInf;
    const Theta th = theta_of(a, b);
    const double mode = f_.latent_mode(th, m);
    const auto mu = static_cast<std::size_t>(m);
    double logq = 0;
    std::vector<double> g(mu);

    if constexpr (!is_bounded(Family::support)) {
      const Interval star = interval_of(a, b, m);
      std::fill(g.begin(), g.end(), mode);
      for (std::size_t r = 0; r < mu; ++r) {
        auto eval = [&](double v) {
          g[r] = v;
          const double l = segment_loglik(a, b, g);
          g[r] = mode;
          return l;
        };
        const auto [lo, hi] = hull(star, mode);
        detail::DefensiveDensity d;
        d.step = detail::StepDensity::build(lo, hi, cfg_.grid_size, eval);
        d.center = mode;
        d.scale = std::max(0.5 * star.width(), 1e-8);
        const double v = target ? (*target)[r] : d.sample(rng_);
        logq += d.log_density(v);
        if (!std::isfinite(logq)) return kNegInf;
        g[r] = v;
      }
    } else {
      const auto& bd = bounds_of(a, b, m);
      const auto xs = segment_data(a, b);
      const double tol = membership_tolerance(xs, Family::support);
      if (bd.slack < -tol) return kNegInf;
      double used = 0;
      for (std::size_t r = 0; r < mu; ++r) {
        const std::span<const double> rest(bd.lower.data() + r + 1, mu - r - 1);
        const double rest_lower = std::accumulate(rest.begin(), rest.end(), 0.0);
        const double lo = bd.lower[r];
        const double hi = std::max(lo, bd.upper - used - rest_lower);
        auto fill = [&](double v) {
          g[r] = v;
          const auto tail = completion(rest, bd.upper - used - v, mode);
          std::copy(tail.begin(), tail.end(), g.begin() + static_cast<std::ptrdiff_t>(r) + 1);
          return segment_loglik(a, b, g);
        };
        double v;
        if constexpr (is_discrete(Family::support)) {
          const auto count = static_cast<std::size_t>(hi - lo) + 1;
          std::vector<double> lw(count);
          for (std::size_t i = 0; i < count; ++i) lw[i] = fill(lo + static_cast<double>(i));
          const double z = log_sum_exp(lw);
          if (!std::isfinite(z)) throw InvariantError("latent proposal has no support");
          if (target) {
            v = (*target)[r];
            if (!(v >= lo && v <= hi) || !is_integral(v)) return kNegInf;
            logq += lw[static_cast<std::size_t>(v - lo)] - z;
          } else {
            v = lo + static_cast<double>(detail::sample_log_categorical(lw, z, rng_));
            logq += lw[static_cast<std::size_t>(v - lo)] - z;
          }
        } else {
          const Interval star = interval_of(a, b, m);
          const double budget = bd.upper - used;
          const std::span<const double> from_r(bd.lower.data() + r, mu - r);
          const double anchor = completion(from_r, budget, mode).front();
          const auto [flo, fhi] = hull(clip(star, lo, hi), anchor);
          detail::DefensiveDensity d;
          d.step = detail::StepDensity::build(flo, fhi, cfg_.grid_size, fill);
          d.lo = lo;
          d.hi = hi;
          if (target) {
            v = (*target)[r];
            if (d.point_mass() && std::abs(v - lo) <= tol) v = lo;
          } else {
            v = d.sample(rng_);
          }
          logq += d.log_density(v);
          if (!std::isfinite(logq)) return kNegInf;
        }
        g[r] = v;
        used += v;
      }
    }
    out = std::move(g);
    return logq;
  }

  std::vector<double> x_;
  Family f_;
  SamplerConfig cfg_;
  std::uint64_t stream_ = 0;
  CounterRng rng_;
  int T_ = 0;
  double log_p_ = 0;
  double log_1mp_ = 0;
  std::array<double, 4> probs_{};
  std::vector<double> jump_prefix_;
  ChainState state_;
  std::unordered_map<std::uint64_t, SegmentInfo> cache_;
  std::array<MoveCounts, kMoveTypes> counts_{};
  std::size_t iter_ = 0;
};

/// log p(k, tau, {m_j, gamma_j} | x) up to a constant, from scratch.
template <SegmentFamily Family>
double target_log_density(const ChainState& state, std::span<const double> x, const Family& f, const SamplerConfig& cfg) {
  const int T = static_cast<int>(x.size());
  const double p = cfg.p_for(x.size());
  const int k = state.k();
  double total = 0;
  if (k > 0) total += k * std::log(p);
  if (T - 1 - k > 0) total += (T - 1 - k) * std::log1p(-p);
  for (std::size_t j = 0; j < state.segments.size(); ++j) {
    const int a = j == 0 ? 1 : state.tau[j - 1];
    const int b = j < state.tau.size() ? state.tau[j] - 1 : T;
    const auto& seg = state.segments[j];
    if (cfg.standard && seg.m != 0) return kNegInf;
    if (!cfg.standard) total += std::log(cfg.rho) + seg.m * std::log1p(-cfg.rho);
    total += joint_loglik(f, x.subspan(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - a + 1)), seg.gamma);
  }
  return total;
}

template <SegmentFamily Family>
ChainState initialize_chain(std::span<const double> x, const Family& f, const SamplerConfig& cfg, std::uint64_t chain = 0) {
  Sampler<Family> s(x, f, cfg, chain);
  s.initialize();
  return s.state();
}

template <SegmentFamily Family>
ChainTrace run_chain(std::span<const double> x, const Family& f, const SamplerConfig& cfg, std::uint64_t chain = 0) {
  Sampler<Family> s(x, f, cfg, chain);
  return s.run();
}

/// Worker count: MVSUM_THREADS if set, else hardware concurrency, capped by jobs.
inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MVSUM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Runs `jobs` independent tasks over a small thread pool; results keep job order.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t jobs, Fn&& fn) {
  std::vector<Result> out(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = worker_count(jobs);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <SegmentFamily Family>
std::vector<ChainTrace> run_chains(std::span<const double> x, const Family& f, const SamplerConfig& cfg) {
  return parallel_map<ChainTrace>(static_cast<std::size_t>(cfg.n_chains),
                                  [&](std::size_t c) { return run_chain(x, f, cfg, c); });
}

} // namespace mvsum
