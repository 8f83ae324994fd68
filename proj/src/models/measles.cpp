#include "panelfilter/models/measles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "panelfilter/errors.hpp"

namespace panelfilter {

namespace {

double day_of_year(double t) { return (t - std::floor(t)) * 365.25; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

constexpr double kLogFloor = -690.77552789821368;  // log(1e-300)

}  // namespace

bool in_school_term(double t) {
  const double d = day_of_year(t);
  return (d >= 7 && d <= 100) || (d >= 115 && d <= 199) || (d >= 252 && d <= 300) ||
         (d >= 308 && d <= 356);
}

bool is_admission_step(double t, const MeaslesConstants& k) {
  // Shifted slightly so a step starting on the day boundary is picked exactly once.
  constexpr double eps = 1e-7;
  const double d = day_of_year(t) - eps;
  return d <= k.admission_day && k.admission_day < d + k.dt * 365.25;
}

double measles_beta0(const MeaslesTheta& th, const MeaslesConstants& k) {
  return th.R0 * (1 - std::exp(-(th.gamma + k.death_rate) * k.dt)) / k.dt;
}

MeaslesRates measles_rates(const MeaslesStepInputs& in, double infected, const MeaslesTheta& th,
                           const MeaslesConstants& k) {
  MeaslesRates r;
  const double b0 = measles_beta0(th, k);
  const double p = k.term_fraction;
  r.beta = in.term ? b0 * (1 + th.amplitude * (1 - p) / p) : b0 * (1 - th.amplitude);
  r.infection = r.beta * (infected + th.iota) / in.pop;
  r.birth = (1 - th.cohort) * in.lagged_births + th.cohort * in.cohort_births / k.dt;
  return r;
}

MeaslesStepInputs measles_step_inputs(double t, const CovariateTable& cov,
                                      const MeaslesConstants& k) {
  MeaslesStepInputs in;
  const double lag = t - k.birth_delay;
  in.lagged_births = cov.value("births", lag);
  in.pop = cov.value("pop", t);
  in.term = in_school_term(t);
  if (is_admission_step(t, k)) in.cohort_births = cov.integral("births", lag - 1, lag);
  return in;
}

MeaslesRates measles_rates(double t, double infected, const MeaslesTheta& th,
                           const CovariateTable& cov, const MeaslesConstants& k) {
  return measles_rates(measles_step_inputs(t, cov, k), infected, th, k);
}

std::pair<long, long> eulermultinom(long n, double rate1, double rate2, double dt,
                                    StreamRng& rng) {
  if (rate1 < 0 || rate2 < 0 || !(dt > 0) || n < 0)
    throw DomainError("eulermultinom needs n >= 0, nonnegative rates and dt > 0");
  const double total = rate1 + rate2;
  if (n == 0 || total == 0) return {0, 0};
  const double leave = -std::expm1(-total * dt);
  const double p1 = rate1 / total * leave;
  const double p2 = rate2 / total * leave;
  long k1 = 0;
  if (p1 > 0) k1 = std::binomial_distribution<long>(n, std::min(p1, 1.0))(rng);
  long k2 = 0;
  if (p2 > 0 && n > k1) {
    const double q = std::min(p2 / (1 - p1), 1.0);
    k2 = std::binomial_distribution<long>(n - k1, q)(rng);
  }
  return {k1, k2};
}

double gamma_noise_increment(double dt, double sigma_se, StreamRng& rng) {
  if (sigma_se == 0) return dt;
  const double s2 = sigma_se * sigma_se;
  return std::gamma_distribution<double>(dt / s2, s2)(rng);
}

void measles_step(MeaslesState& x, const MeaslesStepInputs& in, const MeaslesTheta& th,
                  const MeaslesConstants& k, StreamRng& rng) {
  const MeaslesRates r = measles_rates(in, x.I, th, k);
  const double birth_mean = r.birth * k.dt;
  const long births =
      birth_mean > 0 ? std::poisson_distribution<long>(birth_mean)(rng) : 0;
  const double dgamma = gamma_noise_increment(k.dt, th.sigma_se, rng);
  const auto [se, sd] =
      eulermultinom(static_cast<long>(x.S), r.infection * dgamma / k.dt, k.death_rate, k.dt, rng);
  const auto [ei, ed] = eulermultinom(static_cast<long>(x.E), th.sigma, k.death_rate, k.dt, rng);
  const auto [ir, id] = eulermultinom(static_cast<long>(x.I), th.gamma, k.death_rate, k.dt, rng);
  x.S += static_cast<double>(births - se - sd);
  x.E += static_cast<double>(se - ei - ed);
  x.I += static_cast<double>(ei - ir - id);
  x.Z += static_cast<double>(ir);
}

double measles_dmeasure(double y, double Z, double rho, double psi) {
  const double m = rho * Z;
  const double v = rho * (1 - rho) * Z + (psi * rho * Z) * (psi * rho * Z);
  const double lo = y - 0.5, hi = y + 0.5;
  double p;
  if (!(v > 0)) {
    p = ((y <= 0 || lo < m) && m <= hi) ? 1.0 : 0.0;
  } else {
    const double sd = std::sqrt(v);
    const double zhi = (hi - m) / sd;
    if (y <= 0) {
      p = normal_cdf(zhi);
    } else {
      const double zlo = (lo - m) / sd;
      p = zlo > 0 ? normal_sf(zlo) - normal_sf(zhi) : normal_cdf(zhi) - normal_cdf(zlo);
    }
  }
  return p > 1e-300 ? std::log(p) : kLogFloor;
}

double measles_rmeasure(double Z, double rho, double psi, StreamRng& rng) {
  const double m = rho * Z;
  const double v = rho * (1 - rho) * Z + (psi * rho * Z) * (psi * rho * Z);
  std::normal_distribution<double> z;
  const double draw = v > 0 ? m + std::sqrt(v) * z(rng) : m;
  return std::max(0.0, std::round(draw));
}

double iota_loglog(double pop1950, double iota1, double iota2) {
  if (!(pop1950 > 0)) throw DomainError("iota_loglog needs a positive population");
  return std::exp(iota1 + iota2 * std::log(pop1950));
}

const char* to_string(MeaslesVariant v) {
  switch (v) {
    case MeaslesVariant::unit_specific: return "unit-specific";
    case MeaslesVariant::c_shared: return "c-shared";
    case MeaslesVariant::iota_shared: return "iota-shared";
    case MeaslesVariant::seven_shared: return "7-shared";
  }
  return "?";
}

MeaslesVariant measles_variant_from_string(const std::string& s) {
  for (auto v : {MeaslesVariant::unit_specific, MeaslesVariant::c_shared,
                 MeaslesVariant::iota_shared, MeaslesVariant::seven_shared})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown measles variant '" + s +
                    "' (expected unit-specific, c-shared, iota-shared or 7-shared)");
}

std::shared_ptr<const ParamLayout> measles_layout(MeaslesVariant v, std::size_t n_units) {
  const ParamSpec R0{"R0", Transform::log}, gamma{"gamma", Transform::log},
      sigma{"sigma", Transform::log}, sigma_se{"sigma_se", Transform::log},
      amplitude{"amplitude", Transform::logit}, cohort{"cohort", Transform::logit},
      iota{"iota", Transform::log}, iota1{"iota1", Transform::identity},
      iota2{"iota2", Transform::identity}, rho{"rho", Transform::logit},
      psi{"psi", Transform::log}, S0{"S0", Transform::simplex, true},
      E0{"E0", Transform::simplex, true}, I0{"I0", Transform::simplex, true};
  std::vector<ParamSpec> shared, specific;
  switch (v) {
    case MeaslesVariant::unit_specific:
      specific = {R0, gamma, sigma, sigma_se, amplitude, cohort, iota, rho, psi, S0, E0, I0};
      break;
    case MeaslesVariant::c_shared:
      shared = {cohort};
      specific = {R0, gamma, sigma, sigma_se, amplitude, iota, rho, psi, S0, E0, I0};
      break;
    case MeaslesVariant::iota_shared:
      shared = {iota1, iota2};
      specific = {R0, gamma, sigma, sigma_se, amplitude, cohort, rho, psi, S0, E0, I0};
      break;
    case MeaslesVariant::seven_shared:
      shared = {iota1, iota2, cohort, R0, gamma, sigma, sigma_se, amplitude};
      specific = {rho, psi, S0, E0, I0};
      break;
  }
  return std::make_shared<ParamLayout>(std::move(shared), std::move(specific), n_units);
}

namespace {
std::size_t require(const ParamLayout& layout, const char* name) {
  auto i = layout.unit_view_index(name);
  if (!i) throw LayoutError(std::string("measles layout lacks parameter '") + name + "'");
  return *i;
}
}  // namespace

MeaslesUnit::MeaslesUnit(const ParamLayout& layout, const CovariateTable& cov, double t0,
                         std::size_t n_obs, const MeaslesConstants& constants)
    : k_(constants),
      iR0_(require(layout, "R0")), igamma_(require(layout, "gamma")),
      isigma_(require(layout, "sigma")), isigma_se_(require(layout, "sigma_se")),
      iamp_(require(layout, "amplitude")), icohort_(require(layout, "cohort")),
      irho_(require(layout, "rho")), ipsi_(require(layout, "psi")), iS0_(require(layout, "S0")),
      iE0_(require(layout, "E0")), iI0_(require(layout, "I0")) {
  iiota_ = layout.unit_view_index("iota");
  if (!iiota_) {
    iiota1_ = layout.unit_view_index("iota1");
    iiota2_ = layout.unit_view_index("iota2");
    if (!iiota1_ || !iiota2_) throw LayoutError("measles layout needs iota or (iota1, iota2)");
  }
  const double step_obs = k_.dt * static_cast<double>(k_.steps_per_obs);
  times_.resize(n_obs + 1);
  for (std::size_t n = 0; n <= n_obs; ++n) times_[n] = t0 + step_obs * static_cast<double>(n);
  const std::size_t total = n_obs * k_.steps_per_obs;
  steps_.resize(total);
  for (std::size_t s = 0; s < total; ++s)
    steps_[s] = measles_step_inputs(t0 + k_.dt * static_cast<double>(s), cov, k_);
  pop0_ = cov.value("pop", t0);
  pop1950_ = (cov.t_min() <= 1950 && 1950 <= cov.t_max()) ? cov.value("pop", 1950) : pop0_;
}

MeaslesTheta MeaslesUnit::unpack(std::span<const double> th) const {
  MeaslesTheta t;
  t.R0 = th[iR0_];
  t.gamma = th[igamma_];
  t.sigma = th[isigma_];
  t.sigma_se = th[isigma_se_];
  t.amplitude = th[iamp_];
  t.cohort = th[icohort_];
  t.iota = iiota_ ? th[*iiota_] : iota_loglog(pop1950_, th[*iiota1_], th[*iiota2_]);
  t.rho = th[irho_];
  t.psi = th[ipsi_];
  t.S0 = th[iS0_];
  t.E0 = th[iE0_];
  t.I0 = th[iI0_];
  return t;
}

void MeaslesUnit::rinit(std::span<const double> theta, StreamRng&, std::span<double> x) const {
  const MeaslesTheta t = unpack(theta);
  x[0] = std::round(t.S0 * pop0_);
  x[1] = std::round(t.E0 * pop0_);
  x[2] = std::round(t.I0 * pop0_);
  x[3] = 0;
}

void MeaslesUnit::rstep(std::span<double> x, std::size_t n, std::span<const double> theta,
                        StreamRng& rng) const {
  const MeaslesTheta t = unpack(theta);
  MeaslesState s{x[0], x[1], x[2], 0.0};
  const std::size_t first = (n - 1) * k_.steps_per_obs;
  for (std::size_t i = 0; i < k_.steps_per_obs; ++i) measles_step(s, steps_[first + i], t, k_, rng);
  x[0] = s.S;
  x[1] = s.E;
  x[2] = s.I;
  x[3] = s.Z;
}

double MeaslesUnit::dmeasure(std::span<const double> y, std::span<const double> x, std::size_t,
                             std::span<const double> theta) const {
  return measles_dmeasure(y[0], x[3], theta[irho_], theta[ipsi_]);
}

void MeaslesUnit::rmeasure(std::span<const double> x, std::size_t, std::span<const double> theta,
                           StreamRng& rng, std::span<double> y) const {
  y[0] = measles_rmeasure(x[3], theta[irho_], theta[ipsi_], rng);
}

std::vector<CovariateTable> synthetic_measles_covariates(const std::vector<double>& pop1950,
                                                         int first_year, int last_year) {
  if (last_year <= first_year) throw DomainError("synthetic covariates need at least two years");
  std::vector<CovariateTable> out;
  for (std::size_t u = 0; u < pop1950.size(); ++u) {
    std::vector<double> grid, births, pop;
    for (int y = first_year; y <= last_year; ++y) {
      const double dy = y - 1950;
      const double p = pop1950[u] * (1 + 0.004 * dy);
      // Post-war baby boom bump around 1947.
      const double rate = 0.018 + 0.004 * std::exp(-0.5 * (y - 1947) * (y - 1947) / 4.0);
      grid.push_back(y);
      pop.push_back(p);
      births.push_back(rate * p);
    }
    out.emplace_back(std::move(grid), std::vector<std::string>{"births", "pop"},
                     std::vector<std::vector<double>>{births, pop});
  }
  return out;
}

PanelModel make_measles_panel(MeaslesVariant v, const std::vector<CovariateTable>& cov, double t0,
                              std::size_t n_obs, const MeaslesConstants& constants) {
  auto layout = measles_layout(v, cov.size());
  std::vector<std::shared_ptr<const UnitModel>> units;
  for (const auto& c : cov)
    units.push_back(std::make_shared<MeaslesUnit>(*layout, c, t0, n_obs, constants));
  return PanelModel(std::move(units), layout, cov);
}

ParamVector measles_default_params(const PanelModel& model) {
  const auto& layout = model.layout();
  const std::vector<std::pair<std::string, double>> values = {
      {"R0", 25.0},       {"gamma", 73.0},   {"sigma", 45.6}, {"sigma_se", 0.08},
      {"amplitude", 0.3}, {"cohort", 0.4},   {"iota1", -3.0}, {"iota2", 0.35},
      {"rho", 0.5},       {"psi", 0.15},     {"S0", 0.035},   {"E0", 2e-4},
      {"I0", 2e-4}};
  ParamVector p(model.layout_ptr());
  for (const auto& [name, v] : values) {
    if (layout.find_shared(name)) p.set_shared(name, v);
    if (layout.find_specific(name)) p.set_specific_all(name, v);
  }
  if (layout.find_specific("iota")) {
    for (std::size_t u = 0; u < model.n_units(); ++u) {
      const auto& unit = dynamic_cast<const MeaslesUnit&>(model.unit(u));
      p.set_specific("iota", u, iota_loglog(unit.pop1950(), -3.0, 0.35));
    }
  }
  return p;
}

}  // namespace panelfilter
