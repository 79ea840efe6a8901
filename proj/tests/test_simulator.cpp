#include <catch_amalgamated.hpp>

#include "mvsum/rng.hpp"
#include "mvsum/simulator.hpp"

using namespace mvsum;
using Vec = std::vector<double>;

namespace {

double autocorr(const Vec& x, int lag) {
  const double n = static_cast<double>(x.size());
  double mean = 0;
  for (double v : x) mean += v / n;
  double c0 = 0, cl = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    c0 += (x[t] - mean) * (x[t] - mean);
    if (t + static_cast<std::size_t>(lag) < x.size()) cl += (x[t] - mean) * (x[t + static_cast<std::size_t>(lag)] - mean);
  }
  return cl / c0;
}

} // namespace

TEST_CASE("exchangeable segments are iid draws from the marginal") {
  CounterRng rng(1);
  const NegBinFamily nb({10, 1, 1});
  const auto d = simulate_segment(nb, NegBinTheta{0.4}, 0, 100000, rng);
  CHECK(d.gamma.empty());
  double mean = 0, var = 0;
  for (double v : d.x) mean += v;
  mean /= static_cast<double>(d.x.size());
  for (double v : d.x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d.x.size() - 1);
  // Negative binomial with r = 10 failures and success probability 0.4.
  const double mu = 10 * 0.4 / 0.6, sigma2 = 10 * 0.4 / 0.36;
  CHECK(std::abs(mean - mu) < 3 * std::sqrt(sigma2 / 1e5));
  CHECK(std::abs(autocorr(d.x, 1)) < 0.02);
}

TEST_CASE("moving sums have the triangular autocorrelation") {
  CounterRng rng(2);
  const NormalFamily nf;
  for (int m : {1, 3, 5}) {
    const auto d = simulate_segment(nf, NormalTheta{0, 1}, m, 100000, rng);
    const double mbar = m + 1.0;
    for (int lag = 1; lag <= m + 2; ++lag) {
      const double want = lag <= m ? (mbar - lag) / mbar : 0.0;
      CHECK(std::abs(autocorr(d.x, lag) - want) < 0.02);
    }
  }
}

TEST_CASE("moments of simulated data match the marginal") {
  CounterRng rng(3);
  const GammaFamily gf({3, 1, 1});
  const auto d = simulate_segment(gf, GammaTheta{2}, 2, 100000, rng);
  double mean = 0;
  for (double v : d.x) mean += v;
  mean /= static_cast<double>(d.x.size());
  // Lag correlations inflate the variance of the mean by (1 + 2 sum rho) = mbar.
  CHECK(std::abs(mean - 1.5) < 3 * std::sqrt(0.75 * 3 / 1e5));
}

TEST_CASE("simulated latents are feasible") {
  CounterRng rng(4);
  const NegBinFamily nb({30, 1, 1});
  const GammaFamily gf({2, 1, 1});
  for (int trial = 0; trial < 100; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(0, 6));
    const int n = static_cast<int>(rng.uniform_int(1, 50));
    const auto d = simulate_segment(nb, NegBinTheta{0.5}, m, n, rng);
    CHECK(membership_gamma(d.x, SupportClass::nonneg_discrete, d.gamma));
    const auto g = simulate_segment(gf, GammaTheta{1}, m, n, rng);
    CHECK(membership_gamma(g.x, SupportClass::nonneg_continuous, g.gamma));
  }
}

TEST_CASE("changepoint scenarios") {
  const NormalFamily nf;
  ScenarioSpec sc;
  sc.T = 50;
  CounterRng rng(5);
  const auto single = simulate_changepoint_series(sc, nf, rng);
  CHECK(single.x.size() == 50);
  CHECK(single.segments.size() == 1);

  sc.T = 1200;
  sc.tau = {301, 601, 901};
  sc.nu = 1.0;
  const auto ex = simulate_changepoint_series(sc, nf, rng);
  CHECK(ex.segments.size() == 4);
  for (std::size_t j = 0; j < ex.segments.size(); ++j) {
    CHECK(ex.segments[j].m == 0);
    CHECK(ex.segments[j].theta.mu == (j % 2 == 0 ? 8.0 : -8.0));
  }

  sc.nu = 0.2;
  const auto dep = simulate_changepoint_series(sc, nf, rng);
  for (const auto& s : dep.segments) {
    const std::span<const double> seg(dep.x.data() + s.start - 1, static_cast<std::size_t>(s.end - s.start + 1));
    CHECK(membership_gamma(seg, SupportClass::unbounded_continuous, s.gamma));
  }

  ScenarioSpec bad;
  bad.T = 10;
  bad.tau = {5, 5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.tau = {11};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("smoother segments have larger lag-one autocorrelation") {
  const NegBinFamily nb({200, 20, 10});
  ScenarioSpec sc;
  sc.T = 4000;
  sc.tau = {1001, 2001, 3001};
  sc.m = {0, 2, 5, 9};
  sc.theta = {0.6, 0.6, 0.6, 0.6};
  CounterRng rng(6);
  const auto sim = simulate_changepoint_series(sc, nb, rng);
  double prev = -1;
  for (const auto& s : sim.segments) {
    const Vec seg(sim.x.begin() + s.start - 1, sim.x.begin() + s.end);
    const double r = autocorr(seg, 1);
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("adjacent segments are independent") {
  const NormalFamily nf;
  ScenarioSpec sc;
  sc.T = 20;
  sc.tau = {11};
  sc.m = {2, 3};
  sc.theta = {1, 1};
  sc.mu = 0;
  CounterRng rng(7);
  const int reps = 1000;
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  for (int r = 0; r < reps; ++r) {
    const auto sim = simulate_changepoint_series(sc, nf, rng);
    const double a = sim.x[9], b = sim.x[10];
    sx += a;
    sy += b;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  const double cov = sxy / reps - (sx / reps) * (sy / reps);
  const double sd = std::sqrt((sxx / reps) * (syy / reps) / reps);
  CHECK(std::abs(cov) < 3 * sd);
}
