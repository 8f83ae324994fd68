#include "panelfilter/gaussian_cloning.hpp"

#include <cmath>
#include <ostream>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"

namespace panelfilter {

void GaussianPanelLikelihood::validate() const {
  if (optimum.size() != precision.size()) throw DomainError("one optimum per unit is required");
  if (precision.empty()) throw DomainError("at least one unit is required");
  for (std::size_t u = 0; u < precision.size(); ++u) {
    const auto& P = precision[u];
    if (std::abs(P(0, 1) - P(1, 0)) > 1e-14 * P.norm())
      throw DomainError("unit precision " + std::to_string(u + 1) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(P);
    if (!(es.eigenvalues().minCoeff() > 0))
      throw DomainError("unit precision " + std::to_string(u + 1) + " is not positive definite");
  }
}

GaussianPanelLikelihood GaussianPanelLikelihood::unit_correlation(std::size_t n_units, double rho,
                                                                  double phi_star,
                                                                  double psi_star) {
  if (!(std::abs(rho) < 1)) throw DomainError("correlation must lie in (-1, 1)");
  Eigen::Matrix2d cov;
  cov << 1, rho, rho, 1;
  GaussianPanelLikelihood lik;
  lik.precision.assign(n_units, cov.inverse());
  lik.optimum.assign(n_units, Eigen::Vector2d(phi_star, psi_star));
  return lik;
}

Eigen::VectorXd gaussian_mle(const GaussianPanelLikelihood& lik) {
  lik.validate();
  const std::size_t d = lik.dim();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (std::size_t u = 0; u < lik.n_units(); ++u) {
    const std::size_t idx[2] = {0, u + 1};
    const Eigen::Vector2d w = lik.precision[u] * lik.optimum[u];
    for (int i = 0; i < 2; ++i) {
      rhs(idx[i]) += w(i);
      for (int j = 0; j < 2; ++j) A(idx[i], idx[j]) += lik.precision[u](i, j);
    }
  }
  return A.ldlt().solve(rhs);
}

FullBelief bayes_update_full(const FullBelief& b, const GaussianPanelLikelihood& lik,
                             std::size_t u) {
  const std::size_t idx[2] = {0, u + 1};
  FullBelief out;
  out.precision = b.precision;
  Eigen::VectorXd rhs = b.precision * b.mean;
  const Eigen::Vector2d w = lik.precision[u] * lik.optimum[u];
  for (int i = 0; i < 2; ++i) {
    rhs(idx[i]) += w(i);
    for (int j = 0; j < 2; ++j) out.precision(idx[i], idx[j]) += lik.precision[u](i, j);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(out.precision);
  if (llt.info() != Eigen::Success) throw NumericError("updated precision is not positive definite");
  out.mean = llt.solve(rhs);
  return out;
}

namespace {

// Posterior of the (phi, psi_u) block under a diagonal prior with the given precisions.
void block_update(double tp, double tu, double mp, double mu, const GaussianPanelLikelihood& lik,
                  std::size_t u, DiagonalBelief& out) {
  const Eigen::Matrix2d& L = lik.precision[u];
  Eigen::Matrix2d G = L;
  G(0, 0) += tp;
  G(1, 1) += tu;
  const Eigen::Vector2d rhs = Eigen::Vector2d(tp * mp, tu * mu) + L * lik.optimum[u];
  const Eigen::Vector2d m = G.inverse() * rhs;
  const double a = G(0, 0), c = G(0, 1), d = G(1, 1);
  out.mean(0) = m(0);
  out.mean(u + 1) = m(1);
  out.precision(0) = a - c * c / d;
  out.precision(u + 1) = d - c * c / a;
}

}  // namespace

DiagonalBelief marginalized_update(const DiagonalBelief& b, const GaussianPanelLikelihood& lik,
                                   std::size_t u) {
  DiagonalBelief out = b;
  block_update(b.precision(0), b.precision(u + 1), b.mean(0), b.mean(u + 1), lik, u, out);
  return out;
}

DiagonalBelief perturbed_marginalized_update(const DiagonalBelief& b,
                                             const GaussianPanelLikelihood& lik, std::size_t u,
                                             const Eigen::VectorXd& perturb_var) {
  auto convolve = [](double tau, double var) {
    if (!(var > 0)) return tau;
    const double ts = 1 / var;
    return tau * ts / (tau + ts);
  };
  DiagonalBelief out = b;
  block_update(convolve(b.precision(0), perturb_var(0)),
               convolve(b.precision(u + 1), perturb_var(u + 1)), b.mean(0), b.mean(u + 1), lik, u,
               out);
  return out;
}

Eigen::Matrix2d update_matrix(const DiagonalBelief& b, const GaussianPanelLikelihood& lik,
                              std::size_t u) {
  Eigen::Matrix2d G = lik.precision[u];
  G(0, 0) += b.precision(0);
  G(1, 1) += b.precision(u + 1);
  Eigen::Matrix2d D = Eigen::Matrix2d::Zero();
  D(0, 0) = b.precision(0);
  D(1, 1) = b.precision(u + 1);
  return G.inverse() * D;
}

bool ConditionCheck::all() const {
  for (bool h : holds)
    if (!h) return false;
  return true;
}

ConditionCheck check_convergence_condition(const GaussianPanelLikelihood& lik) {
  lik.validate();
  double sum11 = 0;
  for (const auto& P : lik.precision) sum11 += P(0, 0);
  ConditionCheck c;
  for (const auto& P : lik.precision) {
    const double lhs = P(0, 1) * P(0, 1);
    const double den = P(1, 1) + sum11;
    const double rhs = 4 * P(0, 0) * P(1, 1) * P(1, 1) * sum11 / (den * den);
    c.ratio.push_back(lhs / rhs);
    c.holds.push_back(lhs < rhs);
  }
  return c;
}

const char* to_string(CloningMode m) {
  switch (m) {
    case CloningMode::marginalized: return "marginalized";
    case CloningMode::full: return "full";
    case CloningMode::perturbed: return "perturbed";
  }
  return "?";
}

CloningTrace iterate_cloning(const Eigen::VectorXd& mean0, const Eigen::VectorXd& precision0,
                             const GaussianPanelLikelihood& lik, std::size_t M, CloningMode mode,
                             const PerturbSchedule& schedule) {
  lik.validate();
  const std::size_t d = lik.dim();
  if (static_cast<std::size_t>(mean0.size()) != d || static_cast<std::size_t>(precision0.size()) != d)
    throw DomainError("belief dimension must be U + 1");
  if (mode == CloningMode::full && lik.n_units() > 64)
    throw CapabilityError("full-precision cloning is limited to 64 units");
  if (!(precision0.minCoeff() > 0)) throw DomainError("prior precisions must be positive");

  CloningTrace tr;
  tr.mode = mode;
  tr.mean.reserve(M);
  tr.variance.reserve(M);
  tr.cov_norm.reserve(M);
  tr.cov_phi_psi1.reserve(M);

  if (mode == CloningMode::full) {
    FullBelief b{mean0, precision0.asDiagonal()};
    for (std::size_t m = 1; m <= M; ++m) {
      for (std::size_t u = 0; u < lik.n_units(); ++u) b = bayes_update_full(b, lik, u);
      const Eigen::MatrixXd cov = b.precision.inverse();
      tr.mean.push_back(b.mean);
      tr.variance.push_back(cov.diagonal());
      tr.cov_norm.push_back(1 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                    b.precision, Eigen::EigenvaluesOnly)
                                    .eigenvalues()
                                    .minCoeff());
      Eigen::Matrix2d c;
      c << cov(0, 0), cov(0, 1), cov(1, 0), cov(1, 1);
      tr.cov_phi_psi1.push_back(c);
    }
    tr.final_precision = b.precision;
    return tr;
  }

  Eigen::VectorXd base = schedule.base_var.size() ? schedule.base_var : Eigen::VectorXd::Ones(d);
  DiagonalBelief b{mean0, precision0};
  for (std::size_t m = 1; m <= M; ++m) {
    if (mode == CloningMode::perturbed) {
      const double s2 = schedule.sigma1_sq * std::pow(static_cast<double>(m), -schedule.exponent);
      const Eigen::VectorXd var = s2 * base;
      for (std::size_t u = 0; u < lik.n_units(); ++u)
        b = perturbed_marginalized_update(b, lik, u, var);
    } else {
      for (std::size_t u = 0; u < lik.n_units(); ++u) b = marginalized_update(b, lik, u);
    }
    const Eigen::VectorXd var = b.precision.cwiseInverse();
    tr.mean.push_back(b.mean);
    tr.variance.push_back(var);
    tr.cov_norm.push_back(var.maxCoeff());
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    c(0, 0) = var(0);
    c(1, 1) = var(1);
    tr.cov_phi_psi1.push_back(c);
  }
  tr.final_precision = b.precision.asDiagonal();
  return tr;
}

double block_product_norm(const std::vector<Eigen::Matrix2d>& B) {
  const std::size_t d = B.size();
  if (d == 0) throw DomainError("at least one block is required");
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d + 1, d + 1);
  for (std::size_t k = 1; k <= d; ++k) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(d + 1, d + 1);
    const auto& Bk = B[k - 1];
    A(0, 0) = Bk(0, 0);
    A(0, k) = Bk(0, 1);
    A(k, 0) = Bk(1, 0);
    A(k, k) = Bk(1, 1);
    P = A * P;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P);
  return svd.singularValues()(0);
}

bool block_norm_within(const std::vector<Eigen::Matrix2d>& B, double c) {
  return block_product_norm(B) <= c + 1e-12;
}

void write_cloning_trace_csv(std::ostream& out, const std::vector<CloningTrace>& traces) {
  out << "m,mode,coord,mean,var\n";
  for (const auto& tr : traces)
    for (std::size_t m = 0; m < tr.mean.size(); ++m)
      for (Eigen::Index k = 0; k < tr.mean[m].size(); ++k)
        out << m + 1 << ',' << to_string(tr.mode) << ',' << k << ',' << csv::format(tr.mean[m](k))
            << ',' << csv::format(tr.variance[m](k)) << '\n';
}

void write_cloning_ellipse_csv(std::ostream& out, const std::vector<CloningTrace>& traces) {
  out << "m,mode,center_phi,center_psi,cov11,cov12,cov22\n";
  for (const auto& tr : traces)
    for (std::size_t m = 0; m < tr.mean.size(); ++m) {
      const auto& c = tr.cov_phi_psi1[m];
      out << m + 1 << ',' << to_string(tr.mode) << ',' << csv::format(tr.mean[m](0)) << ','
          << csv::format(tr.mean[m](1)) << ',' << csv::format(c(0, 0)) << ','
          << csv::format(c(0, 1)) << ',' << csv::format(c(1, 1)) << '\n';
    }
}

}  // namespace panelfilter
