#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "panelfilter/covariates.hpp"
#include "panelfilter/panel.hpp"

namespace panelfilter {

// Fixed quantities of the SEIR model. Times are in years.
struct MeaslesConstants {
  double death_rate = 0.02;          // mu_SD = mu_ED = mu_ID, per year
  double birth_delay = 4.0;          // years from birth to entering S
  double admission_day = 251.0;      // school entry, day of year
  double term_fraction = 0.7589;     // share of the year in school term
  double dt = 1.0 / 365.25;          // Euler step (one day)
  std::size_t steps_per_obs = 7;     // weekly reporting
};

struct MeaslesTheta {
  double R0 = 0, gamma = 0, sigma = 0, sigma_se = 0, amplitude = 0, cohort = 0;
  double iota = 0, rho = 0, psi = 0;
  double S0 = 0, E0 = 0, I0 = 0;
};

struct MeaslesState {
  double S = 0, E = 0, I = 0, Z = 0;
};

// Covariate values needed for one Euler step starting at time t.
struct MeaslesStepInputs {
  double lagged_births = 0;  // b(t - birth_delay), per year
  double cohort_births = 0;  // lagged births over the year before admission; 0 off the admission step
  double pop = 0;
  bool term = false;
};

bool in_school_term(double t);
// True when [t, t + dt) contains the admission day.
bool is_admission_step(double t, const MeaslesConstants& k);

struct MeaslesRates {
  double birth = 0;      // mu_BS, recruitment into S per year
  double infection = 0;  // mu_SE before gamma noise, per year
  double beta = 0;
};

double measles_beta0(const MeaslesTheta& th, const MeaslesConstants& k);
MeaslesRates measles_rates(const MeaslesStepInputs& in, double infected, const MeaslesTheta& th,
                           const MeaslesConstants& k);
// Reads b(t) and pop(t) from the covariate table (columns `births`, `pop`).
MeaslesStepInputs measles_step_inputs(double t, const CovariateTable& cov,
                                      const MeaslesConstants& k);
MeaslesRates measles_rates(double t, double infected, const MeaslesTheta& th,
                           const CovariateTable& cov, const MeaslesConstants& k);

// Departures to two competing destinations over dt from n individuals.
std::pair<long, long> eulermultinom(long n, double rate1, double rate2, double dt, StreamRng& rng);
// Gamma(dt / sigma_se^2, sigma_se^2); exactly dt when sigma_se == 0.
double gamma_noise_increment(double dt, double sigma_se, StreamRng& rng);

// One Euler step; Z accumulates I -> R transitions.
void measles_step(MeaslesState& x, const MeaslesStepInputs& in, const MeaslesTheta& th,
                  const MeaslesConstants& k, StreamRng& rng);

// Discretized normal for reported cases, floored at log(1e-300).
double measles_dmeasure(double y, double Z, double rho, double psi);
double measles_rmeasure(double Z, double rho, double psi, StreamRng& rng);

double iota_loglog(double pop1950, double iota1, double iota2);

enum class MeaslesVariant { unit_specific, c_shared, iota_shared, seven_shared };

const char* to_string(MeaslesVariant v);
MeaslesVariant measles_variant_from_string(const std::string& s);

std::shared_ptr<const ParamLayout> measles_layout(MeaslesVariant v, std::size_t n_units);

// One city. State is (S, E, I, Z); observations are weekly reported cases.
class MeaslesUnit final : public UnitModel {
 public:
  MeaslesUnit(const ParamLayout& layout, const CovariateTable& cov, double t0, std::size_t n_obs,
              const MeaslesConstants& constants = {});

  std::size_t state_dim() const override { return 4; }
  std::size_t obs_dim() const override { return 1; }
  std::vector<std::string> obs_names() const override { return {"cases"}; }
  const std::vector<double>& times() const override { return times_; }

  void rinit(std::span<const double> theta, StreamRng& rng, std::span<double> x) const override;
  void rstep(std::span<double> x, std::size_t n, std::span<const double> theta,
             StreamRng& rng) const override;
  double dmeasure(std::span<const double> y, std::span<const double> x, std::size_t n,
                  std::span<const double> theta) const override;
  void rmeasure(std::span<const double> x, std::size_t n, std::span<const double> theta,
                StreamRng& rng, std::span<double> y) const override;

  MeaslesTheta unpack(std::span<const double> theta) const;
  double pop1950() const { return pop1950_; }

 private:
  MeaslesConstants k_;
  std::vector<double> times_;
  std::vector<MeaslesStepInputs> steps_;
  double pop0_ = 0, pop1950_ = 0;
  // Unit-view indices; iota_ is absent for the log-log variant.
  std::size_t iR0_, igamma_, isigma_, isigma_se_, iamp_, icohort_, irho_, ipsi_, iS0_, iE0_, iI0_;
  std::optional<std::size_t> iiota_, iiota1_, iiota2_;
};

// Annual `births` and `pop` for each city on integer years [first_year, last_year].
std::vector<CovariateTable> synthetic_measles_covariates(const std::vector<double>& pop1950,
                                                         int first_year = 1940,
                                                         int last_year = 1956);

PanelModel make_measles_panel(MeaslesVariant v, const std::vector<CovariateTable>& cov, double t0,
                              std::size_t n_obs, const MeaslesConstants& constants = {});

// Generating values used by the presets and tests.
ParamVector measles_default_params(const PanelModel& model);

}  // namespace panelfilter
