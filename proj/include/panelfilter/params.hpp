#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace panelfilter {

enum class Transform { identity, log, logit, simplex };

const char* to_string(Transform t);

struct ParamSpec {
  std::string name;
  Transform transform = Transform::identity;
  // Enters only the initial-state density; perturbed at n = 0 only.
  bool initial_value = false;
};

// Layout of theta = (phi, psi_1, ..., psi_U): shared block first, then one
// unit-specific block per unit. Consecutive simplex-tagged entries of a block
// form one group: k stored fractions with an implied remainder 1 - sum.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(std::vector<ParamSpec> shared, std::vector<ParamSpec> specific, std::size_t n_units);

  std::size_t n_shared() const { return shared_.size(); }
  std::size_t n_specific() const { return specific_.size(); }
  std::size_t n_units() const { return n_units_; }
  std::size_t dim() const { return n_shared() + n_units_ * n_specific(); }
  // Length of the (phi, psi_u) view seen by one unit.
  std::size_t unit_dim() const { return n_shared() + n_specific(); }

  const std::vector<ParamSpec>& shared() const { return shared_; }
  const std::vector<ParamSpec>& specific() const { return specific_; }

  std::size_t shared_index(std::size_t i) const { return i; }
  std::size_t specific_index(std::size_t u, std::size_t i) const {
    return n_shared() + u * n_specific() + i;
  }

  bool is_shared(std::size_t flat) const { return flat < n_shared(); }
  // Unit owning a unit-specific flat coordinate.
  std::size_t unit_of(std::size_t flat) const { return (flat - n_shared()) / n_specific(); }
  const ParamSpec& spec(std::size_t flat) const;
  // "r" for shared entries, "tau2[3]" (1-based unit) for unit-specific ones.
  std::string flat_name(std::size_t flat) const;

  // Position of a named parameter inside the unit view, if present.
  std::optional<std::size_t> unit_view_index(const std::string& name) const;
  std::optional<std::size_t> find_shared(const std::string& name) const;
  std::optional<std::size_t> find_specific(const std::string& name) const;

  // Whole-vector transforms; natural -> estimation throws DomainError naming
  // the offending parameter.
  void to_estimation(std::span<const double> natural, std::span<double> estimation) const;
  void from_estimation(std::span<const double> estimation, std::span<double> natural) const;

  // Gather (phi, psi_u) from a flat vector, keeping its scale.
  void unit_view(std::span<const double> flat, std::size_t u, std::span<double> out) const;
  // Gather (phi, psi_u) from an estimation-scale vector straight to the natural scale.
  void unit_view_natural(std::span<const double> estimation, std::size_t u,
                         std::span<double> out) const;

  bool operator==(const ParamLayout&) const;

 private:
  struct Group {
    std::size_t begin, end;  // offsets inside a block
  };

  static void block_to_estimation(const std::vector<ParamSpec>& specs, const std::vector<Group>& groups,
                                  std::span<const double> nat, std::span<double> est,
                                  const std::string& suffix);
  static void block_from_estimation(const std::vector<ParamSpec>& specs,
                                    const std::vector<Group>& groups, std::span<const double> est,
                                    std::span<double> nat);

  std::vector<ParamSpec> shared_;
  std::vector<ParamSpec> specific_;
  std::size_t n_units_ = 0;
  std::vector<Group> shared_groups_;
  std::vector<Group> specific_groups_;
};

// Log-ratio of a full composition against its last element:
// (p_1..p_k) -> (log(p_1/p_k), ..., log(p_{k-1}/p_k)).
std::vector<double> simplex_to_log_ratio(std::span<const double> composition);
std::vector<double> log_ratio_to_simplex(std::span<const double> ratios);

enum class Scale { natural, estimation };

class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::shared_ptr<const ParamLayout> layout, Scale scale = Scale::natural);
  // Unflatten; throws LayoutError on a length mismatch.
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> flat,
              Scale scale = Scale::natural);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  Scale scale() const { return scale_; }

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& flatten() const { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double shared(const std::string& name) const;
  double specific(const std::string& name, std::size_t u) const;
  void set_shared(const std::string& name, double v);
  void set_specific(const std::string& name, std::size_t u, double v);
  void set_specific_all(const std::string& name, double v);

  // The (phi, psi_u) sub-vector used by unit u's densities.
  std::vector<double> unit(std::size_t u) const;

  ParamVector to_estimation_scale() const;
  ParamVector from_estimation_scale() const;

  bool operator==(const ParamVector& o) const {
    return scale_ == o.scale_ && values_ == o.values_;
  }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
  Scale scale_ = Scale::natural;
};

}  // namespace panelfilter
