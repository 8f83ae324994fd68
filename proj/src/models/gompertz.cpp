#include "panelfilter/models/gompertz.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "panelfilter/errors.hpp"

namespace panelfilter {

double gompertz_step(double x, double r, double K, double sigma2, StreamRng& rng) {
  const double a = std::exp(-r);
  std::normal_distribution<double> z;
  const double log_x = (1 - a) * std::log(K) + a * std::log(x) + std::sqrt(sigma2) * z(rng);
  return std::exp(log_x);
}

double gompertz_dmeasure(double y, double x, double tau2) {
  if (!(y > 0) || !(x > 0) || !(tau2 > 0)) return -std::numeric_limits<double>::infinity();
  const double ly = std::log(y);
  const double d = ly - std::log(x);
  return -0.5 * std::log(2 * std::numbers::pi * tau2) - 0.5 * d * d / tau2 - ly;
}

namespace {
std::size_t require(const ParamLayout& layout, const char* name) {
  auto i = layout.unit_view_index(name);
  if (!i) throw LayoutError(std::string("Gompertz layout lacks parameter '") + name + "'");
  return *i;
}
}  // namespace

GompertzUnit::GompertzUnit(const ParamLayout& layout, double K, double X0, std::size_t n_obs)
    : K_(K), X0_(X0), ir_(require(layout, "r")), isigma2_(require(layout, "sigma2")),
      itau2_(require(layout, "tau2")) {
  if (!(K > 0) || !(X0 > 0)) throw DomainError("Gompertz K and X0 must be positive");
  times_.resize(n_obs + 1);
  for (std::size_t n = 0; n <= n_obs; ++n) times_[n] = static_cast<double>(n);
}

void GompertzUnit::rinit(std::span<const double>, StreamRng&, std::span<double> x) const {
  x[0] = X0_;
}

void GompertzUnit::rstep(std::span<double> x, std::size_t, std::span<const double> theta,
                         StreamRng& rng) const {
  x[0] = gompertz_step(x[0], theta[ir_], K_, theta[isigma2_], rng);
}

double GompertzUnit::dmeasure(std::span<const double> y, std::span<const double> x, std::size_t,
                              std::span<const double> theta) const {
  return gompertz_dmeasure(y[0], x[0], theta[itau2_]);
}

void GompertzUnit::rmeasure(std::span<const double> x, std::size_t, std::span<const double> theta,
                            StreamRng& rng, std::span<double> y) const {
  std::normal_distribution<double> z;
  y[0] = x[0] * std::exp(std::sqrt(theta[itau2_]) * z(rng));
}

std::shared_ptr<const ParamLayout> gompertz_layout(std::size_t n_units) {
  return std::make_shared<ParamLayout>(
      std::vector<ParamSpec>{{"r", Transform::log}, {"sigma2", Transform::log}},
      std::vector<ParamSpec>{{"tau2", Transform::log}}, n_units);
}

PanelModel make_gompertz_panel(std::vector<double> K, std::vector<double> X0, std::size_t n_obs) {
  if (K.size() != X0.size()) throw LayoutError("K and X0 need one entry per unit");
  auto layout = gompertz_layout(K.size());
  std::vector<std::shared_ptr<const UnitModel>> units;
  for (std::size_t u = 0; u < K.size(); ++u)
    units.push_back(std::make_shared<GompertzUnit>(*layout, K[u], X0[u], n_obs));
  return PanelModel(std::move(units), layout);
}

PanelModel make_gompertz_panel(std::size_t n_units, std::size_t n_obs, double K, double X0) {
  return make_gompertz_panel(std::vector<double>(n_units, K), std::vector<double>(n_units, X0),
                             n_obs);
}

ParamVector gompertz_params(std::shared_ptr<const ParamLayout> layout, double r, double sigma2,
                            double tau2) {
  ParamVector p(std::move(layout));
  p.set_shared("r", r);
  p.set_shared("sigma2", sigma2);
  p.set_specific_all("tau2", tau2);
  return p;
}

}  // namespace panelfilter
