#include "panelfilter/models/toy.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "panelfilter/errors.hpp"

namespace panelfilter {

double toy_dmeasure(double y, double psi) {
  const double d = y - psi;
  return -0.5 * std::log(2 * std::numbers::pi) - 0.5 * d * d;
}

ToyNormalUnit::ToyNormalUnit(const ParamLayout& layout, std::size_t n_obs) {
  auto i = layout.unit_view_index("psi");
  if (!i) throw LayoutError("toy layout lacks parameter 'psi'");
  ipsi_ = *i;
  times_.resize(n_obs + 1);
  for (std::size_t n = 0; n <= n_obs; ++n) times_[n] = static_cast<double>(n);
}

double ToyNormalUnit::dmeasure(std::span<const double> y, std::span<const double>, std::size_t,
                               std::span<const double> theta) const {
  return toy_dmeasure(y[0], theta[ipsi_]);
}

void ToyNormalUnit::rmeasure(std::span<const double>, std::size_t, std::span<const double> theta,
                             StreamRng& rng, std::span<double> y) const {
  std::normal_distribution<double> z;
  y[0] = theta[ipsi_] + z(rng);
}

std::shared_ptr<const ParamLayout> toy_layout(std::size_t n_units) {
  return std::make_shared<ParamLayout>(std::vector<ParamSpec>{},
                                       std::vector<ParamSpec>{{"psi", Transform::identity}},
                                       n_units);
}

PanelModel make_toy_panel(std::size_t n_units, std::size_t n_obs) {
  auto layout = toy_layout(n_units);
  std::vector<std::shared_ptr<const UnitModel>> units;
  for (std::size_t u = 0; u < n_units; ++u)
    units.push_back(std::make_shared<ToyNormalUnit>(*layout, n_obs));
  return PanelModel(std::move(units), layout);
}

}  // namespace panelfilter
