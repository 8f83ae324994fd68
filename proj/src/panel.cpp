#include "panelfilter/panel.hpp"

#include <istream>
#include <map>
#include <ostream>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"

namespace panelfilter {

PanelModel::PanelModel(std::vector<std::shared_ptr<const UnitModel>> units,
                       std::shared_ptr<const ParamLayout> layout,
                       std::vector<CovariateTable> covariates)
    : units_(std::move(units)), layout_(std::move(layout)), covariates_(std::move(covariates)) {
  if (units_.empty()) throw LayoutError("panel needs at least one unit");
  if (!layout_ || layout_->n_units() != units_.size())
    throw LayoutError("layout unit count does not match the panel");
  if (!covariates_.empty() && covariates_.size() != units_.size())
    throw LayoutError("covariate tables must be empty or one per unit");
  for (std::size_t u = 0; u < units_.size(); ++u) keys_.push_back(u);
}

PanelModel PanelModel::subpanel(std::size_t u) const {
  if (layout_->n_shared() != 0)
    throw LayoutError("subpanel requires a layout without shared parameters");
  auto layout = std::make_shared<ParamLayout>(layout_->shared(), layout_->specific(), 1);
  std::vector<CovariateTable> cov;
  if (!covariates_.empty()) cov.push_back(covariates_[u]);
  PanelModel out({units_[u]}, layout, std::move(cov));
  out.keys_[0] = keys_[u];
  return out;
}

void check_data(const PanelModel& model, const PanelData& data) {
  if (data.n_units() != model.n_units())
    throw LayoutError("data has " + std::to_string(data.n_units()) + " units, model has " +
                      std::to_string(model.n_units()));
  for (std::size_t u = 0; u < model.n_units(); ++u) {
    const auto& m = model.unit(u);
    const auto& d = data.units[u];
    if (d.n_obs() != m.n_obs())
      throw LayoutError("unit " + std::to_string(u + 1) + ": data has " +
                        std::to_string(d.n_obs()) + " observations, model expects " +
                        std::to_string(m.n_obs()));
    if (d.obs_dim != m.obs_dim() || d.obs.size() != d.n_obs() * d.obs_dim)
      throw LayoutError("unit " + std::to_string(u + 1) + ": observation width mismatch");
  }
}

PanelData simulate_panel(const PanelModel& model, const ParamVector& params, std::uint64_t seed) {
  if (params.scale() != Scale::natural) throw LayoutError("simulate_panel expects natural scale");
  if (!(params.layout() == model.layout())) throw LayoutError("parameter layout differs from model");
  PanelData data;
  data.obs_names = model.unit(0).obs_names();
  for (std::size_t u = 0; u < model.n_units(); ++u) {
    const auto& m = model.unit(u);
    const auto theta = params.unit(u);
    StreamRng rng(stream_key({seed, stream_tag::simulate, model.unit_key(u)}));
    std::vector<double> x(m.state_dim());
    m.rinit(theta, rng, x);
    UnitData d;
    d.obs_dim = m.obs_dim();
    d.times.assign(m.times().begin() + 1, m.times().end());
    d.obs.resize(m.n_obs() * d.obs_dim);
    for (std::size_t n = 1; n <= m.n_obs(); ++n) {
      m.rstep(x, n, theta, rng);
      m.rmeasure(x, n, theta, rng, std::span<double>(d.obs).subspan((n - 1) * d.obs_dim, d.obs_dim));
    }
    data.units.push_back(std::move(d));
  }
  return data;
}

void write_panel_csv(std::ostream& out, const PanelData& data) {
  out << "unit,time";
  for (const auto& n : data.obs_names) out << ',' << n;
  out << '\n';
  for (std::size_t u = 0; u < data.n_units(); ++u) {
    const auto& d = data.units[u];
    for (std::size_t n = 1; n <= d.n_obs(); ++n) {
      out << u + 1 << ',' << csv::format(d.times[n - 1]);
      for (double v : d.y(n)) out << ',' << csv::format(v);
      out << '\n';
    }
  }
}

PanelData read_panel_csv(std::istream& in) {
  const auto t = csv::read(in);
  const auto iu = t.column("unit");
  const auto it = t.column("time");
  PanelData data;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != iu && c != it) {
      data.obs_names.push_back(t.header[c]);
      cols.push_back(c);
    }
  if (cols.empty()) throw ConfigError("panel CSV has no observation columns");
  std::map<long, UnitData> by_unit;
  for (const auto& row : t.rows) {
    auto& d = by_unit[csv::to_long(row[iu])];
    d.obs_dim = cols.size();
    d.times.push_back(csv::to_double(row[it]));
    for (auto c : cols) d.obs.push_back(csv::to_double(row[c]));
  }
  for (auto& [unit, d] : by_unit) data.units.push_back(std::move(d));
  return data;
}

}  // namespace panelfilter
