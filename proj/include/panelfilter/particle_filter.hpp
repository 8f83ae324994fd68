#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "panelfilter/panel.hpp"
#include "panelfilter/params.hpp"
#include "panelfilter/rng.hpp"

namespace panelfilter {

// Log-likelihood contribution of a step whose weights all vanish.
inline constexpr double kFailureLogLik = -690.77552789821368;  // log(1e-300)

// J parameter particles on the estimation scale, one row per particle.
class Swarm {
 public:
  Swarm() = default;
  Swarm(std::size_t n_particles, std::size_t dim);
  // J copies of one estimation-scale vector.
  static Swarm replicate(const ParamVector& estimation, std::size_t n_particles);

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  std::span<double> particle(std::size_t j) { return {values_.data() + j * dim_, dim_}; }
  std::span<const double> particle(std::size_t j) const {
    return {values_.data() + j * dim_, dim_};
  }
  double& at(std::size_t j, std::size_t k) { return values_[j * dim_ + k]; }
  double at(std::size_t j, std::size_t k) const { return values_[j * dim_ + k]; }
  const std::vector<double>& data() const { return values_; }

  std::vector<double> mean() const;
  std::vector<double> sd() const;

  bool operator==(const Swarm&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

// Systematic resampling from a single uniform u01 in [0, 1). Each index i
// appears floor(J w_i / sum w) or ceil(J w_i / sum w) times.
void systematic_resample(std::span<const double> weights, double u01,
                         std::span<std::size_t> indices);
std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n,
                                             StreamRng& rng);

struct StepWeights {
  double cond_loglik = 0;  // log of the mean weight, or kFailureLogLik
  double ess = 0;
  bool failed = false;
};

// Overwrites log_weights with exp(log_w - max). A step fails when every
// log-weight is -infinity (or NaN).
StepWeights normalize_log_weights(std::span<double> log_weights);

struct PfilterOptions {
  std::uint64_t replicate = 0;
  bool track_ancestry = false;
};

struct PfilterResult {
  std::size_t unit = 0;
  double loglik = 0;
  std::vector<double> cond_loglik;  // per n = 1..N
  std::vector<double> ess;
  std::vector<std::size_t> unique_ancestors;  // filled when ancestry is tracked
  std::vector<unsigned char> failed;
  std::size_t n_failures = 0;
  std::optional<Swarm> final_swarm;  // per-particle-theta runs only
};

// Bootstrap filter for unit u at one natural-scale theta.
PfilterResult pfilter_unit(const PanelModel& model, const PanelData& data, std::size_t u,
                           const ParamVector& theta, std::size_t n_particles, std::uint64_t seed,
                           const PfilterOptions& options = {});

// Bootstrap filter where particle j carries its own estimation-scale theta_j;
// parameters are resampled along with the states.
PfilterResult pfilter_unit(const PanelModel& model, const PanelData& data, std::size_t u,
                           const Swarm& swarm, std::uint64_t seed,
                           const PfilterOptions& options = {});

struct PanelLogLik {
  double loglik = 0;
  double se = 0;  // NaN when n_reps == 1
  std::vector<double> unit_loglik;
  std::vector<double> unit_se;
  std::size_t n_failures = 0;
};

// log-mean-exp of replicates and its delta-method standard error.
std::pair<double, double> log_mean_exp(std::span<const double> x);

// Sum over units of the replicate-combined unit log-likelihoods.
PanelLogLik panel_loglik(const PanelModel& model, const PanelData& data, const ParamVector& theta,
                         std::size_t n_particles, std::size_t n_reps, std::uint64_t seed);

// `unit,n,cond_loglik,ess,unique_ancestors,failure_flag`
void write_pfilter_diagnostics_csv(std::ostream& out, std::span<const PfilterResult> results);

}  // namespace panelfilter
