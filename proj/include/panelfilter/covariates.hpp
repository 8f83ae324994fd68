#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace panelfilter {

enum class Interpolation { constant, linear, cubic_spline };

// Named covariate columns on a strictly increasing time grid. Lookups outside
// the grid throw LookupError; nothing is extrapolated.
class CovariateTable {
 public:
  CovariateTable() = default;
  CovariateTable(std::vector<double> grid, std::vector<std::string> names,
                 std::vector<std::vector<double>> columns,
                 Interpolation mode = Interpolation::cubic_spline);

  bool empty() const { return names_.empty(); }
  const std::vector<double>& grid() const { return grid_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& column(const std::string& name) const;
  Interpolation mode() const { return mode_; }
  double t_min() const { return grid_.front(); }
  double t_max() const { return grid_.back(); }

  double value(const std::string& name, double t) const;
  // Integral of the interpolant over [a, b].
  double integral(const std::string& name, double a, double b) const;

 private:
  struct Interp;
  std::size_t index_of(const std::string& name) const;
  void check_range(double t, const std::string& name) const;

  std::vector<double> grid_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  Interpolation mode_ = Interpolation::cubic_spline;
  std::vector<std::shared_ptr<const Interp>> interp_;
};

// Long format `unit,<time_column>,<covariate...>`; units are 1-based and
// returned in ascending order.
std::vector<CovariateTable> read_covariates_csv(std::istream& in,
                                                const std::string& time_column = "time",
                                                Interpolation mode = Interpolation::cubic_spline);
void write_covariates_csv(std::ostream& out, const std::vector<CovariateTable>& tables,
                          const std::string& time_column = "time");

}  // namespace panelfilter
