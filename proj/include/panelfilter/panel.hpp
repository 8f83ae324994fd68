#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "panelfilter/covariates.hpp"
#include "panelfilter/params.hpp"
#include "panelfilter/rng.hpp"

namespace panelfilter {

// One POMP unit. `theta` is always the natural-scale (phi, psi_u) view laid
// out by the panel's ParamLayout. Time indices n run 1..n_obs(); rstep(n)
// advances the latent state from t_{n-1} to t_n. All randomness flows through
// the supplied stream, so implementations must be re-entrant.
class UnitModel {
 public:
  virtual ~UnitModel() = default;

  virtual std::size_t state_dim() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::vector<std::string> obs_names() const = 0;
  // Observation times t_0..t_N (t_0 is the initialization time).
  virtual const std::vector<double>& times() const = 0;
  std::size_t n_obs() const { return times().size() - 1; }

  virtual void rinit(std::span<const double> theta, StreamRng& rng, std::span<double> x) const = 0;
  virtual void rstep(std::span<double> x, std::size_t n, std::span<const double> theta,
                     StreamRng& rng) const = 0;
  // Log-density of y given x; finite or -infinity, never NaN.
  virtual double dmeasure(std::span<const double> y, std::span<const double> x, std::size_t n,
                          std::span<const double> theta) const = 0;
  virtual void rmeasure(std::span<const double> x, std::size_t n, std::span<const double> theta,
                        StreamRng& rng, std::span<double> y) const = 0;
};

class PanelModel {
 public:
  PanelModel(std::vector<std::shared_ptr<const UnitModel>> units,
             std::shared_ptr<const ParamLayout> layout,
             std::vector<CovariateTable> covariates = {});

  std::size_t n_units() const { return units_.size(); }
  const UnitModel& unit(std::size_t u) const { return *units_[u]; }
  const std::shared_ptr<const UnitModel>& unit_ptr(std::size_t u) const { return units_[u]; }
  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  const std::vector<CovariateTable>& covariates() const { return covariates_; }
  // Key used to derive random streams for unit u; preserved by subpanels so a
  // unit filtered alone sees the same streams as inside the full panel.
  std::uint64_t unit_key(std::size_t u) const { return keys_[u]; }

  // Single-unit panel for unit u. Requires a layout without shared parameters.
  PanelModel subpanel(std::size_t u) const;

 private:
  std::vector<std::shared_ptr<const UnitModel>> units_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<CovariateTable> covariates_;
  std::vector<std::uint64_t> keys_;
};

struct UnitData {
  std::vector<double> times;  // t_1..t_N
  std::size_t obs_dim = 1;
  std::vector<double> obs;    // N x obs_dim, row-major

  std::size_t n_obs() const { return times.size(); }
  std::span<const double> y(std::size_t n) const {  // n = 1..N
    return std::span<const double>(obs).subspan((n - 1) * obs_dim, obs_dim);
  }
  bool operator==(const UnitData&) const = default;
};

struct PanelData {
  std::vector<std::string> obs_names;
  std::vector<UnitData> units;

  std::size_t n_units() const { return units.size(); }
  bool operator==(const PanelData&) const = default;
};

// Throws LayoutError when data and model disagree on units, lengths or widths.
void check_data(const PanelModel& model, const PanelData& data);

// Draws x_0 from rinit, steps through N_u transitions and samples each
// observation. A pure function of (model, params, seed).
PanelData simulate_panel(const PanelModel& model, const ParamVector& params, std::uint64_t seed);

// `unit,time,<obs...>` with 1-based units.
void write_panel_csv(std::ostream& out, const PanelData& data);
PanelData read_panel_csv(std::istream& in);

}  // namespace panelfilter
