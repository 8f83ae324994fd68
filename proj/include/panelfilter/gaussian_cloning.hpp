#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace panelfilter {

// Gaussian panel likelihood: unit u contributes exp(-q_u/2) in (phi, psi_u)
// with q_u = (v - optimum_u)' precision_u (v - optimum_u). Coordinates of the
// full parameter are ordered (phi, psi_1, ..., psi_U); units are 0-based.
struct GaussianPanelLikelihood {
  std::vector<Eigen::Vector2d> optimum;
  std::vector<Eigen::Matrix2d> precision;

  std::size_t n_units() const { return precision.size(); }
  std::size_t dim() const { return n_units() + 1; }
  // Throws DomainError unless every precision is symmetric positive definite.
  void validate() const;

  // Unit covariance [[1, rho], [rho, 1]] for every unit, optima at the given point.
  static GaussianPanelLikelihood unit_correlation(std::size_t n_units, double rho,
                                                  double phi_star = 0, double psi_star = 0);
};

// Joint maximizer from the normal equations sum_u E_u P_u (theta - theta*_u) = 0.
Eigen::VectorXd gaussian_mle(const GaussianPanelLikelihood& lik);

struct DiagonalBelief {
  Eigen::VectorXd mean;
  Eigen::VectorXd precision;  // diagonal entries
};

struct FullBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
};

FullBelief bayes_update_full(const FullBelief& b, const GaussianPanelLikelihood& lik,
                             std::size_t u);
DiagonalBelief marginalized_update(const DiagonalBelief& b, const GaussianPanelLikelihood& lik,
                                   std::size_t u);
// Convolves the (phi, psi_u) marginals with N(0, perturb_var) noise, then
// applies marginalized_update. perturb_var has one entry per coordinate.
DiagonalBelief perturbed_marginalized_update(const DiagonalBelief& b,
                                             const GaussianPanelLikelihood& lik, std::size_t u,
                                             const Eigen::VectorXd& perturb_var);

// Map from the prior (phi, psi_u) mean to the posterior mean in a marginalized update.
Eigen::Matrix2d update_matrix(const DiagonalBelief& b, const GaussianPanelLikelihood& lik,
                              std::size_t u);

struct ConditionCheck {
  std::vector<bool> holds;
  std::vector<double> ratio;  // lhs / rhs per unit
  bool all() const;
};
ConditionCheck check_convergence_condition(const GaussianPanelLikelihood& lik);

enum class CloningMode { marginalized, full, perturbed };
const char* to_string(CloningMode m);

// Perturbation variance at iteration m is sigma1_sq * m^-exponent * base_var.
struct PerturbSchedule {
  double sigma1_sq = 1.0;
  double exponent = 1.5;
  Eigen::VectorXd base_var;  // empty means all ones
};

struct CloningTrace {
  CloningMode mode = CloningMode::marginalized;
  std::vector<Eigen::VectorXd> mean;       // after iterations 1..M
  std::vector<Eigen::VectorXd> variance;   // marginal variances after each iteration
  std::vector<double> cov_norm;            // spectral norm of the covariance
  std::vector<Eigen::Matrix2d> cov_phi_psi1;  // covariance of (phi, psi_1)
  Eigen::MatrixXd final_precision;         // full mode: dense; otherwise diagonal
};

// M full iterations through units 0..U-1. Full mode is capped at 64 units.
CloningTrace iterate_cloning(const Eigen::VectorXd& mean0, const Eigen::VectorXd& precision0,
                             const GaussianPanelLikelihood& lik, std::size_t M, CloningMode mode,
                             const PerturbSchedule& schedule = {});

// Embeds each 2x2 B_k at coordinates (0, k) of a (d+1) identity and returns the
// spectral norm of A_d ... A_1.
double block_product_norm(const std::vector<Eigen::Matrix2d>& B);
bool block_norm_within(const std::vector<Eigen::Matrix2d>& B, double c);

// `m,mode,coord,mean,var`
void write_cloning_trace_csv(std::ostream& out, const std::vector<CloningTrace>& traces);
// `m,mode,center_phi,center_psi,cov11,cov12,cov22`
void write_cloning_ellipse_csv(std::ostream& out, const std::vector<CloningTrace>& traces);

}  // namespace panelfilter
