#include <doctest.h>

#include <gsl/gsl_cdf.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "panelfilter/errors.hpp"
#include "panelfilter/models/gompertz.hpp"
#include "panelfilter/models/measles.hpp"
#include "panelfilter/models/toy.hpp"
#include "panelfilter/particle_filter.hpp"

using namespace panelfilter;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& x) {
  Moments m;
  for (double v : x) m.mean += v;
  m.mean /= x.size();
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= x.size() - 1;
  return m;
}

MeaslesTheta plain_theta() {
  MeaslesTheta t;
  t.R0 = 15;
  t.gamma = 52;
  t.sigma = 45;
  t.sigma_se = 0;
  t.amplitude = 0;
  t.cohort = 0;
  t.iota = 0;
  t.rho = 0.5;
  t.psi = 0.1;
  return t;
}

}  // namespace

TEST_CASE("toy measurement density") {
  CHECK(toy_dmeasure(0.3, 0.3) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  CHECK(toy_dmeasure(1.3, 0.3) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi) - 0.5));
  auto model = make_toy_panel(2, 5);
  CHECK(model.unit(0).state_dim() == 0);
  CHECK(model.layout().n_specific() == 1);
}

TEST_CASE("Gompertz step: deterministic cases") {
  StreamRng rng(1);
  CHECK(gompertz_step(3.0, 0.2, 3.0, 0.0, rng) == doctest::Approx(3.0));
  const double x = gompertz_step(2.5, 0.2, 1.0, 0.0, rng);
  CHECK(std::log(x) == doctest::Approx(std::exp(-0.2) * std::log(2.5)));
}

TEST_CASE("Gompertz step: log-scale noise has the stated variance") {
  StreamRng rng(2);
  const std::size_t n = 100000;
  const double s2 = 0.01, r = 0.1, x0 = 2.0;
  std::vector<double> lx(n);
  for (auto& v : lx) v = std::log(gompertz_step(x0, r, 1.0, s2, rng));
  const auto m = moments(lx);
  CHECK(std::abs(m.mean - std::exp(-r) * std::log(x0)) < 3 * std::sqrt(s2 / n));
  CHECK(std::abs(m.var - s2) < 3 * s2 * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("Gompertz measurement density") {
  CHECK(gompertz_dmeasure(1.7, 1.7, 0.01) ==
        doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 0.01) - std::log(1.7)));
  CHECK(gompertz_dmeasure(0.0, 1.0, 0.01) == -INFINITY);
  CHECK(gompertz_dmeasure(-1.0, 1.0, 0.01) == -INFINITY);
  CHECK(gompertz_dmeasure(1.0, 1.0, 1e12) < gompertz_dmeasure(1.0, 1.0, 1e6));

  // Trapezoid rule on y = e^s.
  const double x = 1.3, tau2 = 0.04, sd = std::sqrt(tau2);
  const int K = 20000;
  const double lo = std::log(x) - 14 * sd, hi = std::log(x) + 14 * sd, h = (hi - lo) / K;
  double total = 0;
  for (int i = 0; i <= K; ++i) {
    const double s = lo + i * h;
    const double f = std::exp(gompertz_dmeasure(std::exp(s), x, tau2) + s);
    total += (i == 0 || i == K ? 0.5 : 1.0) * f * h;
  }
  CHECK(std::abs(total - 1) < 1e-6);
}

TEST_CASE("Gompertz simulation without noise stays at K") {
  auto model = make_gompertz_panel(2, 10, 2.0, 2.0);
  auto theta = gompertz_params(model.layout_ptr(), 0.1, 1e-300, 1e-300);
  const auto data = simulate_panel(model, theta, 4);
  for (const auto& u : data.units)
    for (double y : u.obs) CHECK(y == doctest::Approx(2.0));
}

TEST_CASE("Euler-multinomial probabilities") {
  StreamRng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto [a, b] = eulermultinom(50, 0, 0, 0.1, rng);
    CHECK(a == 0);
    CHECK(b == 0);
  }
  CHECK_THROWS_AS(eulermultinom(5, -1, 0, 0.1, rng), DomainError);
  CHECK_THROWS_AS(eulermultinom(5, 1, -1, 0.1, rng), DomainError);
  CHECK_THROWS_AS(eulermultinom(-1, 1, 1, 0.1, rng), DomainError);

  const double dt = 0.1, mu = std::log(2.0) / (2 * dt);
  const std::size_t n = 100000;
  double c[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto [a, b] = eulermultinom(1, mu, mu, dt, rng);
    c[a ? 1 : b ? 2 : 0] += 1;
  }
  const double p[3] = {0.5, 0.25, 0.25};
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(p[k] * (1 - p[k]) / n);
    CHECK(std::abs(c[k] / n - p[k]) < 3 * se);
  }
}

TEST_CASE("Euler-multinomial first destination is binomial") {
  StreamRng rng(4);
  const long trials = 20;
  const double dt = 0.1, mu = std::log(2.0) / (2 * dt), p1 = 0.25;
  const std::size_t n = 100000;
  std::vector<double> counts(trials + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [a, b] = eulermultinom(trials, mu, mu, dt, rng);
    REQUIRE(a + b <= trials);
    counts[a] += 1;
  }
  // Pool the tails so every expected count is at least 5.
  std::vector<double> obs, expect;
  double o = 0, e = 0;
  for (long k = 0; k <= trials; ++k) {
    o += counts[k];
    e += n * std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) +
                      k * std::log(p1) + (trials - k) * std::log(1 - p1));
    if (e >= 5 && k < trials) {
      obs.push_back(o);
      expect.push_back(e);
      o = e = 0;
    }
  }
  obs.back() += o;
  expect.back() += e;
  double chi2 = 0;
  for (std::size_t i = 0; i < obs.size(); ++i)
    chi2 += (obs[i] - expect[i]) * (obs[i] - expect[i]) / expect[i];
  CHECK(gsl_cdf_chisq_Q(chi2, obs.size() - 1.0) > 0.01);
}

TEST_CASE("gamma noise increments") {
  StreamRng rng(5);
  const double dt = 1.0 / 365.25, s = 0.08;
  const std::size_t n = 100000;
  std::vector<double> x(n);
  for (auto& v : x) v = gamma_noise_increment(dt, s, rng);
  const auto m = moments(x);
  const double var = s * s * dt;
  CHECK(std::abs(m.mean - dt) < 3 * std::sqrt(var / n));
  // Gamma fourth central moment: 3 k^2 th^4 + 6 k th^4 with shape k, scale th.
  const double k = dt / (s * s), th = s * s;
  const double mu4 = (3 * k * k + 6 * k) * std::pow(th, 4);
  CHECK(std::abs(m.var - var) < 3 * std::sqrt((mu4 - var * var) / n));

  // Coefficient of variation is sigma_se / sqrt(dt).
  for (double small : {0.001, 0.0005}) {
    std::vector<double> y(10000);
    for (auto& v : y) v = gamma_noise_increment(dt, small, rng);
    const auto my = moments(y);
    CHECK(std::sqrt(my.var) / my.mean == doctest::Approx(small / std::sqrt(dt)).epsilon(0.05));
  }
  std::vector<double> y(10000);
  for (auto& v : y) v = gamma_noise_increment(dt, 0.0005, rng);
  const auto my = moments(y);
  CHECK(std::sqrt(my.var) / my.mean < 0.01);
  CHECK(gamma_noise_increment(dt, 0.0, rng) == dt);
}

TEST_CASE("seasonal transmission") {
  MeaslesConstants k;
  auto th = plain_theta();
  MeaslesStepInputs term{0, 0, 1e6, true}, holiday{0, 0, 1e6, false};
  CHECK(measles_rates(term, 100, th, k).beta == measles_rates(holiday, 100, th, k).beta);
  th.amplitude = 0.5;
  const double ratio = measles_rates(term, 100, th, k).beta / measles_rates(holiday, 100, th, k).beta;
  CHECK(ratio == doctest::Approx(2.3177).epsilon(1e-4));
  CHECK(ratio == doctest::Approx((1 + 0.5 * 0.2411 / 0.7589) / 0.5).epsilon(1e-12));
  const auto r = measles_rates(term, 100, th, k);
  CHECK(r.infection == doctest::Approx(r.beta * 100 / 1e6));
  CHECK(measles_beta0(th, k) == doctest::Approx(15 * (1 - std::exp(-52.02 / 365.25)) * 365.25));

  // Term calendar covers the stated share of the year.
  int days = 0;
  for (int d = 0; d < 365; ++d) days += in_school_term(1950 + (d + 0.5) / 365.25);
  CHECK(days / 365.0 == doctest::Approx(0.7589).epsilon(0.01));
}

TEST_CASE("cohort entry conserves births") {
  MeaslesConstants k;
  const auto cov = synthetic_measles_covariates({5e5})[0];
  auto th = plain_theta();
  // Admission steps are one per year.
  std::vector<std::size_t> adm;
  const std::size_t steps = static_cast<std::size_t>(2 * 365.25);
  for (std::size_t s = 0; s < steps; ++s)
    if (is_admission_step(1950 + s * k.dt, k)) adm.push_back(s);
  REQUIRE(adm.size() == 2);
  const std::size_t a = adm[1];

  double continuous = 0;
  for (std::size_t s = adm[0]; s < a; ++s) {
    th.cohort = 0;
    continuous += measles_rates(1950 + s * k.dt, 0, th, cov, k).birth * k.dt;
    th.cohort = 1;
    if (s > adm[0]) CHECK(measles_rates(1950 + s * k.dt, 0, th, cov, k).birth == 0);
  }
  th.cohort = 1;
  const double pulse = measles_rates(1950 + a * k.dt, 0, th, cov, k).birth * k.dt;
  CHECK(std::abs(pulse / continuous - 1) < 1e-3);
}

TEST_CASE("disease-free state absorbs") {
  MeaslesConstants k;
  auto th = plain_theta();
  MeaslesStepInputs in{0, 0, 1e5, true};
  MeaslesState x{5e4, 0, 0, 0};
  StreamRng rng(6);
  for (int s = 0; s < 200; ++s) measles_step(x, in, th, k, rng);
  CHECK(x.E == 0);
  CHECK(x.I == 0);
  CHECK(x.Z == 0);
}

TEST_CASE("closed population conserves S + E + I + R") {
  MeaslesConstants k;
  k.death_rate = 0;
  auto th = plain_theta();
  th.iota = 5;
  th.sigma_se = 0.05;
  MeaslesStepInputs in{0, 0, 2e5, true};
  MeaslesState x{1e5, 100, 100, 0};
  const double total = x.S + x.E + x.I;
  StreamRng rng(7);
  double recovered = 0;
  for (int s = 0; s < 300; ++s) {
    x.Z = 0;
    measles_step(x, in, th, k, rng);
    recovered += x.Z;
    CHECK(x.S >= 0);
    CHECK(x.E >= 0);
    CHECK(x.I >= 0);
    CHECK(x.S + x.E + x.I + recovered == total);
  }
}

TEST_CASE("large-population dynamics follow the ODE") {
  MeaslesConstants k;
  k.death_rate = 0;
  // Slow enough dynamics that the daily step stays close to the continuous flow.
  auto th = plain_theta();
  th.R0 = 5;
  th.gamma = th.sigma = 12;
  const double pop = 1e8;
  MeaslesStepInputs in{0, 0, pop, true};
  MeaslesState x{0.5 * pop, 2e-4 * pop, 2e-4 * pop, 0};
  const double beta = measles_rates(in, 0, th, k).beta;
  double S = x.S, E = x.E, I = x.I;
  const int sub = 1000;
  const double h = k.dt / sub;
  StreamRng rng(8);
  for (int day = 0; day < 30; ++day) {
    measles_step(x, in, th, k, rng);
    for (int i = 0; i < sub; ++i) {
      const double inf = beta * I / pop * S, lat = th.sigma * E, rec = th.gamma * I;
      S -= h * inf;
      E += h * (inf - lat);
      I += h * (lat - rec);
    }
  }
  CHECK(std::abs(x.S / S - 1) < 0.02);
  CHECK(std::abs(x.E / E - 1) < 0.02);
  CHECK(std::abs(x.I / I - 1) < 0.02);
}

TEST_CASE("reporting density") {
  CHECK(measles_dmeasure(0, 0, 0.5, 0.1) == 0);
  CHECK(measles_dmeasure(3, 0, 0.5, 0.1) == doctest::Approx(std::log(1e-300)));
  double total = 0;
  for (int y = 0; y <= 400; ++y) total += std::exp(measles_dmeasure(y, 100, 0.5, 0.1));
  CHECK(std::abs(total - 1) < 1e-8);
  for (int y = 50; y < 70; ++y)
    CHECK(measles_dmeasure(y + 1, 100, 0.5, 0.1) < measles_dmeasure(y, 100, 0.5, 0.1));
  for (int y = 50; y > 30; --y)
    CHECK(measles_dmeasure(y - 1, 100, 0.5, 0.1) < measles_dmeasure(y, 100, 0.5, 0.1));
  CHECK(measles_dmeasure(1e6, 10, 0.5, 0.1) == doctest::Approx(std::log(1e-300)));
}

TEST_CASE("full reporting without overdispersion reports Z") {
  StreamRng rng(9);
  for (double Z : {0.0, 1.0, 17.0, 2500.0}) {
    CHECK(measles_rmeasure(Z, 1.0, 0.0, rng) == Z);
    CHECK(measles_dmeasure(Z, Z, 1.0, 0.0) == 0);
  }
  // Nearly degenerate: the mode is still Z.
  CHECK(measles_dmeasure(40, 40, 1 - 1e-9, 1e-9) > std::log(0.99));
}

TEST_CASE("log-log import rate") {
  CHECK(iota_loglog(1e5, 0.7, 0) == doctest::Approx(std::exp(0.7)));
  CHECK(iota_loglog(3e5, 0, 1) == doctest::Approx(3e5));
  const double a = std::log(iota_loglog(2e4, -3, 0.35)), b = std::log(iota_loglog(8e5, -3, 0.35));
  CHECK((b - a) / (std::log(8e5) - std::log(2e4)) == doctest::Approx(0.35).epsilon(1e-12));
  CHECK_THROWS_AS(iota_loglog(0, 1, 1), DomainError);
}

TEST_CASE("measles layouts") {
  CHECK(measles_layout(MeaslesVariant::unit_specific, 3)->n_shared() == 0);
  CHECK(measles_layout(MeaslesVariant::c_shared, 3)->n_shared() == 1);
  CHECK(measles_layout(MeaslesVariant::seven_shared, 3)->n_shared() == 8);
  for (auto v : {MeaslesVariant::unit_specific, MeaslesVariant::c_shared,
                 MeaslesVariant::iota_shared, MeaslesVariant::seven_shared})
    CHECK(measles_variant_from_string(to_string(v)) == v);
  CHECK_THROWS(measles_variant_from_string("8-shared"));
}

TEST_CASE("measles simulation replays from its seed") {
  const auto cov = synthetic_measles_covariates({3e5, 1e6});
  auto model = make_measles_panel(MeaslesVariant::seven_shared, cov, 1950, 20);
  const auto theta = measles_default_params(model);
  const auto a = simulate_panel(model, theta, 10);
  const auto b = simulate_panel(model, theta, 10);
  CHECK(a == b);
  CHECK_FALSE(a == simulate_panel(model, theta, 11));
  for (const auto& u : a.units)
    for (double y : u.obs) {
      CHECK(y >= 0);
      CHECK(y == std::round(y));
    }
  // The filter sees a finite likelihood at the generating values.
  const auto pl = panel_loglik(model, a, theta, 200, 1, 3);
  CHECK(std::isfinite(pl.loglik));
}
