#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "panelfilter/panel.hpp"
#include "panelfilter/params.hpp"
#include "panelfilter/particle_filter.hpp"

namespace panelfilter {

struct CoolingSchedule {
  enum class Kind { geometric, polynomial };
  Kind kind = Kind::geometric;
  double factor = 0.98623270449335;  // 0.5^(1/50): halves the scale over 50 iterations
  double delta = 0.5;                // polynomial: scale^2 = m^-(1 + delta)

  static CoolingSchedule geometric(double factor);
  // Factor that multiplies the scale by `fraction` over `iterations` iterations.
  static CoolingSchedule geometric_fraction(double fraction, double iterations);
  static CoolingSchedule polynomial(double delta);

  // Multiplier applied to the base perturbation sd at iteration m >= 1.
  double scale(std::size_t m) const;
};

// Per-coordinate perturbation sd on the estimation scale, flat layout order.
struct PerturbKernel {
  std::vector<double> sd;
  std::vector<unsigned char> initial_value;  // perturbed only at n = 0

  // 0.02 for dynamic parameters and 0.1 for initial-value parameters.
  static PerturbKernel defaults(const ParamLayout& layout);
  // Same sd for every unit; names not listed get 0.
  static PerturbKernel from_names(const ParamLayout& layout,
                                  const std::vector<std::pair<std::string, double>>& sd);

  // Coordinates active during unit u's pass at time index n.
  bool active(const ParamLayout& layout, std::size_t flat, std::size_t u, std::size_t n) const;
};

// Adds N(0, (sd * scale)^2) to each active coordinate of one particle.
void perturb_particle(std::span<double> theta, const ParamLayout& layout,
                      const PerturbKernel& kernel, double scale, std::size_t u, std::size_t n,
                      StreamRng& rng);
// Whole-swarm perturbation with one stream per particle.
void perturb(Swarm& swarm, const ParamLayout& layout, const PerturbKernel& kernel, double scale,
             std::size_t u, std::size_t n, std::uint64_t seed);

struct MifConfig {
  std::size_t M = 50;
  std::size_t J = 1000;
  bool marginalize = true;
  CoolingSchedule cooling;
  std::optional<PerturbKernel> kernel;  // defaults(layout) when unset
  std::vector<std::size_t> eval_schedule;  // iterations (1-based) at which to evaluate
  std::size_t eval_J = 1000;
  std::size_t eval_reps = 1;
  bool shuffle_units = false;
  bool track_unique = false;
  double max_failure_fraction = 0.5;

  // Throws ConfigError on invalid settings.
  void validate(const ParamLayout& layout) const;
};

struct StepRecord {
  std::size_t iteration, unit, n;
  double cond_loglik, ess;
  bool failed;
};

struct UniqueRecord {
  std::size_t iteration, unit, n;
  std::vector<std::size_t> count;  // one per flat coordinate
};

struct EvalRecord {
  std::size_t iteration;
  double loglik, se;
};

struct FitResult {
  std::shared_ptr<const ParamLayout> layout;
  Swarm final_swarm;                        // estimation scale
  std::vector<std::vector<double>> mean;    // per iteration, estimation scale
  std::vector<std::vector<double>> sd;      // per iteration, estimation scale
  std::vector<double> filter_loglik;        // per iteration, sum of conditional logliks
  std::vector<EvalRecord> evals;
  std::vector<std::pair<std::size_t, Swarm>> snapshots;  // at eval iterations
  std::vector<StepRecord> steps;
  std::vector<UniqueRecord> unique;
  bool unique_tracked = false;

  // Natural-scale image of the final swarm mean.
  ParamVector estimate() const;
  ParamVector estimate(std::size_t iteration) const;
};

// One unit's pass (unit u, iteration m) of the iterated filter, in place on the swarm.
// Returns the number of failed steps. Records go to `result` when given.
std::size_t mif_unit_pass(const PanelModel& model, const PanelData& data, Swarm& swarm,
                          std::size_t u, std::size_t m, const MifConfig& config,
                          std::uint64_t seed, FitResult* result = nullptr);

FitResult mif_panel(const PanelModel& model, const PanelData& data, const ParamVector& start,
                    const MifConfig& config, std::uint64_t seed);
FitResult mif_panel(const PanelModel& model, const PanelData& data, Swarm initial,
                    const MifConfig& config, std::uint64_t seed);

struct UniqueCount {
  std::size_t iteration, unit, n;
  std::string param;
  std::size_t count;
};
// Flattened per-(parameter, u, n) counts. Throws ConfigError when tracking was off.
std::vector<UniqueCount> unique_particle_counts(const FitResult& fit);
// Counts for one flat coordinate during unit u's pass of an iteration, indexed by n = 0..N.
std::vector<std::size_t> unique_counts_for(const FitResult& fit, std::size_t iteration,
                                           std::size_t unit, std::size_t flat);

struct MultistartSummary {
  double max = 0, median = 0, p10 = 0;
  std::size_t n_ok = 0, n_failed = 0;
};

struct MultistartRun {
  std::optional<FitResult> fit;
  double loglik = 0;
  std::string error;
};

struct MultistartResult {
  std::vector<MultistartRun> runs;
  MultistartSummary summary;
};

// Final log-likelihood used to rank runs; defaults to the last evaluation, or
// the last iteration's filter log-likelihood when none was scheduled.
using FitScore = std::function<double(const FitResult&)>;
double default_fit_score(const FitResult& fit);

// Start i runs with seed stream_key(seed, multistart, i).
MultistartResult run_multistart(const PanelModel& model, const PanelData& data,
                                const std::vector<ParamVector>& starts, const MifConfig& config,
                                std::uint64_t seed, const FitScore& score = default_fit_score);
MultistartSummary summarize_logliks(std::vector<double> logliks);

// Uniform draws on the natural scale inside [lower, upper]; lower > upper throws DomainError.
std::vector<ParamVector> sample_hypercube_starts(const ParamVector& lower,
                                                 const ParamVector& upper, std::size_t count,
                                                 std::uint64_t seed);
// Box [center / 2, center * 2]; every entry of center must be positive.
std::vector<ParamVector> sample_hypercube_starts(const ParamVector& center, std::size_t count,
                                                 std::uint64_t seed);

// `iteration,param,mean,sd`: mean is the natural-scale image, sd is on the estimation scale.
void write_fit_trace_csv(std::ostream& out, const FitResult& fit);
// `iteration,loglik,loglik_se`
void write_fit_loglik_csv(std::ostream& out, const FitResult& fit);
// `iteration,unit,n,cond_loglik,ess,failure_flag,param,unique_count`
void write_fit_diagnostics_csv(std::ostream& out, const FitResult& fit);

}  // namespace panelfilter
