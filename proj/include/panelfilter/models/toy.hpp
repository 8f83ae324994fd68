#pragma once

#include <memory>

#include "panelfilter/panel.hpp"

namespace panelfilter {

// log N(y | psi, 1).
double toy_dmeasure(double y, double psi);

// Y_{u,n} iid N(psi_u, 1); the latent state is empty.
class ToyNormalUnit final : public UnitModel {
 public:
  ToyNormalUnit(const ParamLayout& layout, std::size_t n_obs);

  std::size_t state_dim() const override { return 0; }
  std::size_t obs_dim() const override { return 1; }
  std::vector<std::string> obs_names() const override { return {"y"}; }
  const std::vector<double>& times() const override { return times_; }

  void rinit(std::span<const double>, StreamRng&, std::span<double>) const override {}
  void rstep(std::span<double>, std::size_t, std::span<const double>, StreamRng&) const override {}
  double dmeasure(std::span<const double> y, std::span<const double> x, std::size_t n,
                  std::span<const double> theta) const override;
  void rmeasure(std::span<const double> x, std::size_t n, std::span<const double> theta,
                StreamRng& rng, std::span<double> y) const override;

 private:
  std::vector<double> times_;
  std::size_t ipsi_;
};

// Unit-specific `psi` only, identity transform.
std::shared_ptr<const ParamLayout> toy_layout(std::size_t n_units);
PanelModel make_toy_panel(std::size_t n_units, std::size_t n_obs);

}  // namespace panelfilter
