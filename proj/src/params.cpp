#include "panelfilter/params.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "panelfilter/errors.hpp"

namespace panelfilter {

const char* to_string(Transform t) {
  switch (t) {
    case Transform::identity: return "identity";
    case Transform::log: return "log";
    case Transform::logit: return "logit";
    case Transform::simplex: return "simplex";
  }
  return "?";
}

ParamLayout::ParamLayout(std::vector<ParamSpec> shared, std::vector<ParamSpec> specific,
                         std::size_t n_units)
    : shared_(std::move(shared)), specific_(std::move(specific)), n_units_(n_units) {
  if (n_units_ == 0) throw LayoutError("layout needs at least one unit");
  auto groups = [](const std::vector<ParamSpec>& specs) {
    std::vector<Group> out;
    for (std::size_t i = 0; i < specs.size();) {
      if (specs[i].transform != Transform::simplex) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < specs.size() && specs[j].transform == Transform::simplex) ++j;
      out.push_back({i, j});
      i = j;
    }
    return out;
  };
  shared_groups_ = groups(shared_);
  specific_groups_ = groups(specific_);
  std::vector<std::string> names;
  for (const auto& s : shared_) names.push_back(s.name);
  for (const auto& s : specific_) names.push_back(s.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw LayoutError("duplicate parameter name in layout");
}

const ParamSpec& ParamLayout::spec(std::size_t flat) const {
  if (flat >= dim()) throw LayoutError("flat index out of range");
  if (is_shared(flat)) return shared_[flat];
  return specific_[(flat - n_shared()) % n_specific()];
}

std::string ParamLayout::flat_name(std::size_t flat) const {
  const auto& s = spec(flat);
  if (is_shared(flat)) return s.name;
  std::ostringstream os;
  os << s.name << '[' << unit_of(flat) + 1 << ']';
  return os.str();
}

std::optional<std::size_t> ParamLayout::find_shared(const std::string& name) const {
  for (std::size_t i = 0; i < shared_.size(); ++i)
    if (shared_[i].name == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> ParamLayout::find_specific(const std::string& name) const {
  for (std::size_t i = 0; i < specific_.size(); ++i)
    if (specific_[i].name == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> ParamLayout::unit_view_index(const std::string& name) const {
  if (auto i = find_shared(name)) return *i;
  if (auto i = find_specific(name)) return n_shared() + *i;
  return std::nullopt;
}

void ParamLayout::block_to_estimation(const std::vector<ParamSpec>& specs,
                                      const std::vector<Group>& groups,
                                      std::span<const double> nat, std::span<double> est,
                                      const std::string& suffix) {
  auto fail = [&](std::size_t i, const char* why) {
    std::ostringstream os;
    os << "parameter '" << specs[i].name << suffix << "' = " << nat[i] << ": " << why;
    throw DomainError(os.str());
  };
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double v = nat[i];
    switch (specs[i].transform) {
      case Transform::identity:
        est[i] = v;
        break;
      case Transform::log:
        if (!(v > 0)) fail(i, "log transform needs a positive value");
        est[i] = std::log(v);
        break;
      case Transform::logit:
        if (!(v > 0 && v < 1)) fail(i, "logit transform needs a value in (0, 1)");
        est[i] = std::log(v / (1 - v));
        break;
      case Transform::simplex:
        break;
    }
  }
  for (const auto& g : groups) {
    double sum = 0;
    for (std::size_t i = g.begin; i < g.end; ++i) {
      if (!(nat[i] > 0)) fail(i, "simplex fractions must be positive");
      sum += nat[i];
    }
    const double rest = 1 - sum;
    if (!(rest > 0)) fail(g.begin, "simplex fractions must sum to less than 1");
    for (std::size_t i = g.begin; i < g.end; ++i) est[i] = std::log(nat[i] / rest);
  }
}

void ParamLayout::block_from_estimation(const std::vector<ParamSpec>& specs,
                                        const std::vector<Group>& groups,
                                        std::span<const double> est, std::span<double> nat) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double z = est[i];
    switch (specs[i].transform) {
      case Transform::identity:
        nat[i] = z;
        break;
      case Transform::log:
        nat[i] = std::exp(z);
        break;
      case Transform::logit:
        nat[i] = 1 / (1 + std::exp(-z));
        break;
      case Transform::simplex:
        break;
    }
  }
  for (const auto& g : groups) {
    // The remainder carries log-ratio 0.
    double top = 0;
    for (std::size_t i = g.begin; i < g.end; ++i) top = std::max(top, est[i]);
    double denom = std::exp(-top);
    for (std::size_t i = g.begin; i < g.end; ++i) denom += std::exp(est[i] - top);
    for (std::size_t i = g.begin; i < g.end; ++i) nat[i] = std::exp(est[i] - top) / denom;
  }
}

void ParamLayout::to_estimation(std::span<const double> natural,
                                std::span<double> estimation) const {
  if (natural.size() != dim() || estimation.size() != dim())
    throw LayoutError("parameter vector length does not match layout");
  block_to_estimation(shared_, shared_groups_, natural.subspan(0, n_shared()),
                      estimation.subspan(0, n_shared()), "");
  for (std::size_t u = 0; u < n_units_; ++u) {
    const auto off = specific_index(u, 0);
    block_to_estimation(specific_, specific_groups_, natural.subspan(off, n_specific()),
                        estimation.subspan(off, n_specific()), "[" + std::to_string(u + 1) + "]");
  }
}

void ParamLayout::from_estimation(std::span<const double> estimation,
                                  std::span<double> natural) const {
  if (natural.size() != dim() || estimation.size() != dim())
    throw LayoutError("parameter vector length does not match layout");
  block_from_estimation(shared_, shared_groups_, estimation.subspan(0, n_shared()),
                        natural.subspan(0, n_shared()));
  for (std::size_t u = 0; u < n_units_; ++u) {
    const auto off = specific_index(u, 0);
    block_from_estimation(specific_, specific_groups_, estimation.subspan(off, n_specific()),
                          natural.subspan(off, n_specific()));
  }
}

void ParamLayout::unit_view(std::span<const double> flat, std::size_t u,
                            std::span<double> out) const {
  std::copy_n(flat.begin(), n_shared(), out.begin());
  std::copy_n(flat.begin() + specific_index(u, 0), n_specific(), out.begin() + n_shared());
}

void ParamLayout::unit_view_natural(std::span<const double> estimation, std::size_t u,
                                    std::span<double> out) const {
  block_from_estimation(shared_, shared_groups_, estimation.subspan(0, n_shared()),
                        out.subspan(0, n_shared()));
  block_from_estimation(specific_, specific_groups_,
                        estimation.subspan(specific_index(u, 0), n_specific()),
                        out.subspan(n_shared(), n_specific()));
}

bool ParamLayout::operator==(const ParamLayout& o) const {
  auto same = [](const std::vector<ParamSpec>& a, const std::vector<ParamSpec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].transform != b[i].transform ||
          a[i].initial_value != b[i].initial_value)
        return false;
    return true;
  };
  return n_units_ == o.n_units_ && same(shared_, o.shared_) && same(specific_, o.specific_);
}

std::vector<double> simplex_to_log_ratio(std::span<const double> composition) {
  if (composition.size() < 2) throw DomainError("simplex needs at least two elements");
  for (double p : composition)
    if (!(p > 0)) throw DomainError("simplex elements must be positive");
  const double last = composition.back();
  std::vector<double> out(composition.size() - 1);
  for (std::size_t i = 0; i + 1 < composition.size(); ++i) out[i] = std::log(composition[i] / last);
  return out;
}

std::vector<double> log_ratio_to_simplex(std::span<const double> ratios) {
  double top = 0;
  for (double z : ratios) top = std::max(top, z);
  std::vector<double> out(ratios.size() + 1);
  double denom = std::exp(-top);
  for (double z : ratios) denom += std::exp(z - top);
  for (std::size_t i = 0; i < ratios.size(); ++i) out[i] = std::exp(ratios[i] - top) / denom;
  out.back() = std::exp(-top) / denom;
  return out;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, Scale scale)
    : layout_(std::move(layout)), values_(layout_->dim(), 0.0), scale_(scale) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> flat,
                         Scale scale)
    : layout_(std::move(layout)), values_(std::move(flat)), scale_(scale) {
  if (values_.size() != layout_->dim()) {
    std::ostringstream os;
    os << "parameter vector has " << values_.size() << " entries, layout expects "
       << layout_->dim();
    throw LayoutError(os.str());
  }
}

double ParamVector::shared(const std::string& name) const {
  auto i = layout_->find_shared(name);
  if (!i) throw LayoutError("no shared parameter '" + name + "'");
  return values_[*i];
}

double ParamVector::specific(const std::string& name, std::size_t u) const {
  auto i = layout_->find_specific(name);
  if (!i) throw LayoutError("no unit-specific parameter '" + name + "'");
  if (u >= layout_->n_units()) throw LayoutError("unit index out of range");
  return values_[layout_->specific_index(u, *i)];
}

void ParamVector::set_shared(const std::string& name, double v) {
  auto i = layout_->find_shared(name);
  if (!i) throw LayoutError("no shared parameter '" + name + "'");
  values_[*i] = v;
}

void ParamVector::set_specific(const std::string& name, std::size_t u, double v) {
  auto i = layout_->find_specific(name);
  if (!i) throw LayoutError("no unit-specific parameter '" + name + "'");
  if (u >= layout_->n_units()) throw LayoutError("unit index out of range");
  values_[layout_->specific_index(u, *i)] = v;
}

void ParamVector::set_specific_all(const std::string& name, double v) {
  for (std::size_t u = 0; u < layout_->n_units(); ++u) set_specific(name, u, v);
}

std::vector<double> ParamVector::unit(std::size_t u) const {
  if (u >= layout_->n_units()) throw LayoutError("unit index out of range");
  std::vector<double> out(layout_->unit_dim());
  layout_->unit_view(values_, u, out);
  return out;
}

ParamVector ParamVector::to_estimation_scale() const {
  if (scale_ == Scale::estimation) return *this;
  ParamVector out(layout_, Scale::estimation);
  layout_->to_estimation(values_, out.values_);
  return out;
}

ParamVector ParamVector::from_estimation_scale() const {
  if (scale_ == Scale::natural) return *this;
  ParamVector out(layout_, Scale::natural);
  layout_->from_estimation(values_, out.values_);
  return out;
}

}  // namespace panelfilter
