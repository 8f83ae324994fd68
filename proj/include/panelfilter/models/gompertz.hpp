#pragma once

#include <memory>
#include <vector>

#include "panelfilter/panel.hpp"

namespace panelfilter {

// x' = K^(1 - e^-r) x^(e^-r) eps with log eps ~ N(0, sigma2).
double gompertz_step(double x, double r, double K, double sigma2, StreamRng& rng);

// Lognormal density of Y: log N(log y | log x, tau2) - log y. -inf for y <= 0.
double gompertz_dmeasure(double y, double x, double tau2);

// Stochastic Gompertz unit with known carrying capacity K and initial size X0.
// Reads shared `r`, `sigma2` and unit-specific `tau2` from the unit view.
class GompertzUnit final : public UnitModel {
 public:
  GompertzUnit(const ParamLayout& layout, double K, double X0, std::size_t n_obs);

  double K() const { return K_; }
  double X0() const { return X0_; }

  std::size_t state_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 1; }
  std::vector<std::string> obs_names() const override { return {"y"}; }
  const std::vector<double>& times() const override { return times_; }

  void rinit(std::span<const double> theta, StreamRng& rng, std::span<double> x) const override;
  void rstep(std::span<double> x, std::size_t n, std::span<const double> theta,
             StreamRng& rng) const override;
  double dmeasure(std::span<const double> y, std::span<const double> x, std::size_t n,
                  std::span<const double> theta) const override;
  void rmeasure(std::span<const double> x, std::size_t n, std::span<const double> theta,
                StreamRng& rng, std::span<double> y) const override;

 private:
  double K_, X0_;
  std::vector<double> times_;
  std::size_t ir_, isigma2_, itau2_;
};

// Shared r, sigma2 (log scale); unit-specific tau2 (log scale).
std::shared_ptr<const ParamLayout> gompertz_layout(std::size_t n_units);

PanelModel make_gompertz_panel(std::size_t n_units, std::size_t n_obs, double K = 1.0,
                               double X0 = 1.0);
PanelModel make_gompertz_panel(std::vector<double> K, std::vector<double> X0, std::size_t n_obs);

ParamVector gompertz_params(std::shared_ptr<const ParamLayout> layout, double r, double sigma2,
                            double tau2);

}  // namespace panelfilter
