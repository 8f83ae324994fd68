#include "panelfilter/covariates.hpp"

#include <gsl/gsl_interp.h>

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"

namespace panelfilter {

struct CovariateTable::Interp {
  gsl_interp* handle = nullptr;
  ~Interp() {
    if (handle) gsl_interp_free(handle);
  }
};

CovariateTable::CovariateTable(std::vector<double> grid, std::vector<std::string> names,
                               std::vector<std::vector<double>> columns, Interpolation mode)
    : grid_(std::move(grid)), names_(std::move(names)), columns_(std::move(columns)), mode_(mode) {
  if (names_.size() != columns_.size())
    throw ConfigError("covariate names and columns differ in count");
  if (grid_.empty() && !names_.empty()) throw ConfigError("covariate grid is empty");
  for (std::size_t i = 1; i < grid_.size(); ++i)
    if (!(grid_[i] > grid_[i - 1])) throw ConfigError("covariate grid must be strictly increasing");
  for (const auto& c : columns_)
    if (c.size() != grid_.size()) throw ConfigError("covariate column length != grid length");

  if (mode_ == Interpolation::constant) return;
  const gsl_interp_type* type =
      (mode_ == Interpolation::cubic_spline && grid_.size() >= 3) ? gsl_interp_cspline
                                                                   : gsl_interp_linear;
  if (grid_.size() < 2) return;
  for (const auto& c : columns_) {
    auto in = std::make_shared<Interp>();
    in->handle = gsl_interp_alloc(type, grid_.size());
    gsl_interp_init(in->handle, grid_.data(), c.data(), grid_.size());
    interp_.push_back(in);
  }
}

std::size_t CovariateTable::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw LookupError("no covariate named '" + name + "'");
}

const std::vector<double>& CovariateTable::column(const std::string& name) const {
  return columns_[index_of(name)];
}

void CovariateTable::check_range(double t, const std::string& name) const {
  if (grid_.empty() || t < grid_.front() || t > grid_.back()) {
    std::ostringstream os;
    os << "covariate '" << name << "' looked up at t = " << t << " outside grid ["
       << (grid_.empty() ? 0.0 : grid_.front()) << ", " << (grid_.empty() ? 0.0 : grid_.back())
       << "]";
    throw LookupError(os.str());
  }
}

double CovariateTable::value(const std::string& name, double t) const {
  const auto i = index_of(name);
  check_range(t, name);
  const auto& y = columns_[i];
  if (grid_.size() == 1) return y[0];
  if (mode_ == Interpolation::constant) {
    auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
    return y[static_cast<std::size_t>(it - grid_.begin()) - 1];
  }
  return gsl_interp_eval(interp_[i]->handle, grid_.data(), y.data(), t, nullptr);
}

double CovariateTable::integral(const std::string& name, double a, double b) const {
  const auto i = index_of(name);
  check_range(a, name);
  check_range(b, name);
  if (a == b) return 0.0;
  if (a > b) return -integral(name, b, a);
  const auto& y = columns_[i];
  if (grid_.size() == 1) return y[0] * (b - a);
  if (mode_ == Interpolation::constant) {
    double total = 0;
    for (std::size_t k = 0; k + 1 < grid_.size(); ++k) {
      const double lo = std::max(a, grid_[k]);
      const double hi = std::min(b, grid_[k + 1]);
      if (hi > lo) total += y[k] * (hi - lo);
    }
    return total;
  }
  return gsl_interp_eval_integ(interp_[i]->handle, grid_.data(), y.data(), a, b, nullptr);
}

std::vector<CovariateTable> read_covariates_csv(std::istream& in, const std::string& time_column,
                                                Interpolation mode) {
  const auto t = csv::read(in);
  const auto iu = t.column("unit");
  const auto it = t.column(time_column);
  std::vector<std::string> names;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != iu && c != it) {
      names.push_back(t.header[c]);
      cols.push_back(c);
    }
  std::map<long, std::vector<const std::vector<std::string>*>> by_unit;
  for (const auto& row : t.rows) by_unit[csv::to_long(row[iu])].push_back(&row);
  std::vector<CovariateTable> out;
  for (const auto& [unit, rows] : by_unit) {
    std::vector<double> grid;
    std::vector<std::vector<double>> columns(names.size());
    for (const auto* row : rows) {
      grid.push_back(csv::to_double((*row)[it]));
      for (std::size_t k = 0; k < cols.size(); ++k)
        columns[k].push_back(csv::to_double((*row)[cols[k]]));
    }
    out.emplace_back(std::move(grid), names, std::move(columns), mode);
  }
  return out;
}

void write_covariates_csv(std::ostream& out, const std::vector<CovariateTable>& tables,
                          const std::string& time_column) {
  if (tables.empty()) return;
  out << "unit," << time_column;
  for (const auto& n : tables.front().names()) out << ',' << n;
  out << '\n';
  for (std::size_t u = 0; u < tables.size(); ++u) {
    const auto& tab = tables[u];
    for (std::size_t k = 0; k < tab.grid().size(); ++k) {
      out << u + 1 << ',' << csv::format(tab.grid()[k]);
      for (const auto& n : tab.names()) out << ',' << csv::format(tab.column(n)[k]);
      out << '\n';
    }
  }
}

}  // namespace panelfilter
