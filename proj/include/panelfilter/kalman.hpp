#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "panelfilter/panel.hpp"
#include "panelfilter/params.hpp"

namespace panelfilter {

// x_0 ~ N(m0, P0); x_n = a x_{n-1} + b + N(0, q); y_n = x_n + N(0, r_obs).
struct LinearGaussianSSM {
  double a = 1, b = 0, q = 0, r_obs = 0, m0 = 0, P0 = 0;
};

struct KalmanTrace {
  std::vector<double> pred_mean, pred_var;      // of x_n given y_{1:n-1}
  std::vector<double> filter_mean, filter_var;  // of x_n given y_{1:n}
  double loglik = 0;
};

KalmanTrace kalman_filter(const LinearGaussianSSM& ssm, std::span<const double> y);
double kalman_loglik(const LinearGaussianSSM& ssm, std::span<const double> y);

// Log-scale state space form of a Gompertz unit; its observations are log y.
LinearGaussianSSM gompertz_to_lgssm(double K, double r, double sigma2, double tau2, double X0);

// Exact log-likelihood of natural-scale observations y, Jacobian included.
double gompertz_exact_loglik(double K, double r, double sigma2, double tau2, double X0,
                             std::span<const double> y);

// Per-unit exact log-likelihoods of a Gompertz panel (every unit must be a GompertzUnit).
std::vector<double> gompertz_exact_unit_loglik(const PanelModel& model, const PanelData& data,
                                               const ParamVector& params);
double gompertz_exact_panel_loglik(const PanelModel& model, const PanelData& data,
                                   const ParamVector& params);

struct ExactMaxOptions {
  std::size_t restarts = 20;
  double tolerance = 1e-8;          // simplex size on the estimation scale
  std::size_t max_iterations = 200000;
  std::size_t max_dim = 200;
  std::uint64_t seed = 0;
  std::optional<ParamVector> start;  // natural scale; random restarts scatter around it
};

struct ExactMaxResult {
  ParamVector params;  // natural scale
  double loglik = 0;
  std::size_t evaluations = 0;
};

// Nelder-Mead over every coordinate of the Gompertz layout. Throws
// CapabilityError when the free dimension exceeds max_dim.
ExactMaxResult maximize_exact(const PanelModel& model, const PanelData& data,
                              const ExactMaxOptions& options = {});

}  // namespace panelfilter
