#include "panelfilter/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"
#include "panelfilter/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace panelfilter {

Swarm::Swarm(std::size_t n_particles, std::size_t dim)
    : n_(n_particles), dim_(dim), values_(n_particles * dim, 0.0) {}

Swarm Swarm::replicate(const ParamVector& estimation, std::size_t n_particles) {
  if (estimation.scale() != Scale::estimation)
    throw LayoutError("swarm particles live on the estimation scale");
  Swarm s(n_particles, estimation.size());
  for (std::size_t j = 0; j < n_particles; ++j)
    std::copy(estimation.values().begin(), estimation.values().end(), s.particle(j).begin());
  return s;
}

std::vector<double> Swarm::mean() const {
  std::vector<double> m(dim_, 0.0);
  for (std::size_t j = 0; j < n_; ++j)
    for (std::size_t k = 0; k < dim_; ++k) m[k] += at(j, k);
  for (auto& v : m) v /= static_cast<double>(n_);
  return m;
}

std::vector<double> Swarm::sd() const {
  const auto m = mean();
  std::vector<double> s(dim_, 0.0);
  if (n_ < 2) return s;
  for (std::size_t j = 0; j < n_; ++j)
    for (std::size_t k = 0; k < dim_; ++k) {
      const double d = at(j, k) - m[k];
      s[k] += d * d;
    }
  for (auto& v : s) v = std::sqrt(v / static_cast<double>(n_ - 1));
  return s;
}

void systematic_resample(std::span<const double> weights, double u01,
                         std::span<std::size_t> indices) {
  const std::size_t n = indices.size();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double step = total / static_cast<double>(n);
  // Rounding must never select a trailing zero-weight entry.
  std::size_t last = weights.size() - 1;
  while (last > 0 && !(weights[last] > 0)) --last;
  double cumulative = weights.empty() ? 0.0 : weights[0];
  std::size_t i = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double position = (u01 + static_cast<double>(j)) * step;
    while (position >= cumulative && i < last) cumulative += weights[++i];
    indices[j] = i;
  }
}

std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n,
                                             StreamRng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0)) throw DomainError("systematic_resample: weights sum to zero");
  std::vector<std::size_t> idx(n);
  systematic_resample(weights, rng.uniform(), idx);
  return idx;
}

StepWeights normalize_log_weights(std::span<double> log_weights) {
  StepWeights out;
  double top = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights)
    if (lw > top) top = lw;
  if (!std::isfinite(top)) {
    out.failed = true;
    out.cond_loglik = kFailureLogLik;
    for (auto& w : log_weights) w = 0;
    return out;
  }
  double sum = 0, sum_sq = 0;
  for (auto& w : log_weights) {
    w = std::isnan(w) ? 0.0 : std::exp(w - top);
    sum += w;
    sum_sq += w * w;
  }
  out.cond_loglik = top + std::log(sum / static_cast<double>(log_weights.size()));
  out.ess = sum * sum / sum_sq;
  return out;
}

namespace {

bool parallel_particles(std::size_t n) {
#ifdef _OPENMP
  return num_threads() > 1 && n >= 64 && !omp_in_parallel();
#else
  (void)n;
  return false;
#endif
}

std::size_t count_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

// Shared loop for both filter flavours. With `swarm` set, row j of
// `thetas` is particle j's natural-scale unit view and the swarm rows
// follow the resampled states.
PfilterResult filter_core(const PanelModel& model, const PanelData& data, std::size_t u,
                          std::size_t n_particles, std::uint64_t seed,
                          const PfilterOptions& opt, std::vector<double> thetas, bool per_particle,
                          Swarm* swarm) {
  if (n_particles < 2) throw ConfigError("particle filter needs J >= 2");
  if (u >= model.n_units()) throw LayoutError("unit index out of range");
  check_data(model, data);
  const auto& m = model.unit(u);
  const auto& d = data.units[u];
  const std::size_t J = n_particles;
  const std::size_t sdim = m.state_dim();
  const std::size_t tdim = model.layout().unit_dim();
  const std::size_t N = m.n_obs();
  const auto ukey = model.unit_key(u);

  auto theta_of = [&](std::size_t j) {
    return std::span<const double>(thetas).subspan(per_particle ? j * tdim : 0, tdim);
  };

  PfilterResult res;
  res.unit = u;
  res.cond_loglik.resize(N);
  res.ess.resize(N);
  res.failed.assign(N, 0);
  if (opt.track_ancestry) res.unique_ancestors.resize(N);

  std::vector<double> x(J * sdim), x_new(J * sdim);
  std::vector<double> w(J);
  std::vector<std::size_t> k(J);
  std::vector<std::size_t> origin(J), origin_new(J);
  std::iota(origin.begin(), origin.end(), std::size_t{0});
  std::vector<double> thetas_new;
  Swarm swarm_new;
  const bool par = parallel_particles(J);

#pragma omp parallel for schedule(static) if (par)
  for (std::size_t j = 0; j < J; ++j) {
    StreamRng rng(stream_key({seed, stream_tag::pfilter, opt.replicate, ukey, 0, j}));
    m.rinit(theta_of(j), rng, std::span<double>(x).subspan(j * sdim, sdim));
  }

  for (std::size_t n = 1; n <= N; ++n) {
    const auto y = d.y(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t j = 0; j < J; ++j) {
      StreamRng rng(stream_key({seed, stream_tag::pfilter, opt.replicate, ukey, n, j}));
      auto xj = std::span<double>(x).subspan(j * sdim, sdim);
      m.rstep(xj, n, theta_of(j), rng);
      w[j] = m.dmeasure(y, xj, n, theta_of(j));
    }
    const auto sw = normalize_log_weights(w);
    res.cond_loglik[n - 1] = sw.cond_loglik;
    res.ess[n - 1] = sw.ess;
    if (sw.failed) {
      res.failed[n - 1] = 1;
      ++res.n_failures;
    } else {
      StreamRng rng(stream_key({seed, stream_tag::resample, opt.replicate, ukey, n}));
      systematic_resample(w, rng.uniform(), k);
      for (std::size_t j = 0; j < J; ++j) {
        std::copy_n(x.begin() + k[j] * sdim, sdim, x_new.begin() + j * sdim);
        origin_new[j] = origin[k[j]];
      }
      x.swap(x_new);
      origin.swap(origin_new);
      if (per_particle) {
        thetas_new.resize(thetas.size());
        for (std::size_t j = 0; j < J; ++j)
          std::copy_n(thetas.begin() + k[j] * tdim, tdim, thetas_new.begin() + j * tdim);
        thetas.swap(thetas_new);
      }
      if (swarm) {
        swarm_new = Swarm(J, swarm->dim());
        for (std::size_t j = 0; j < J; ++j) {
          auto src = swarm->particle(k[j]);
          std::copy(src.begin(), src.end(), swarm_new.particle(j).begin());
        }
        std::swap(*swarm, swarm_new);
      }
    }
    if (opt.track_ancestry) res.unique_ancestors[n - 1] = count_unique(origin);
  }
  // Fixed-order reduction.
  res.loglik = 0;
  for (double c : res.cond_loglik) res.loglik += c;
  return res;
}

}  // namespace

PfilterResult pfilter_unit(const PanelModel& model, const PanelData& data, std::size_t u,
                           const ParamVector& theta, std::size_t n_particles, std::uint64_t seed,
                           const PfilterOptions& options) {
  const auto nat = theta.from_estimation_scale();
  if (!(nat.layout() == model.layout())) throw LayoutError("parameter layout differs from model");
  return filter_core(model, data, u, n_particles, seed, options, nat.unit(u), false, nullptr);
}

PfilterResult pfilter_unit(const PanelModel& model, const PanelData& data, std::size_t u,
                           const Swarm& swarm, std::uint64_t seed, const PfilterOptions& options) {
  const auto& layout = model.layout();
  if (swarm.dim() != layout.dim()) throw LayoutError("swarm dimension does not match layout");
  const std::size_t tdim = layout.unit_dim();
  std::vector<double> thetas(swarm.size() * tdim);
  for (std::size_t j = 0; j < swarm.size(); ++j)
    layout.unit_view_natural(swarm.particle(j), u,
                             std::span<double>(thetas).subspan(j * tdim, tdim));
  Swarm copy = swarm;
  auto res = filter_core(model, data, u, swarm.size(), seed, options, std::move(thetas), true, &copy);
  res.final_swarm = std::move(copy);
  return res;
}

std::pair<double, double> log_mean_exp(std::span<const double> x) {
  const std::size_t n = x.size();
  double top = -std::numeric_limits<double>::infinity();
  for (double v : x) top = std::max(top, v);
  if (!std::isfinite(top)) return {top, std::numeric_limits<double>::quiet_NaN()};
  double mean = 0;
  for (double v : x) mean += std::exp(v - top);
  mean /= static_cast<double>(n);
  double se = std::numeric_limits<double>::quiet_NaN();
  if (n > 1) {
    double ss = 0;
    for (double v : x) {
      const double dv = std::exp(v - top) - mean;
      ss += dv * dv;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    se = sd / std::sqrt(static_cast<double>(n)) / mean;
  }
  return {top + std::log(mean), se};
}

PanelLogLik panel_loglik(const PanelModel& model, const PanelData& data, const ParamVector& theta,
                         std::size_t n_particles, std::size_t n_reps, std::uint64_t seed) {
  if (n_reps < 1) throw ConfigError("panel_loglik needs n_reps >= 1");
  const auto nat = theta.from_estimation_scale();
  check_data(model, data);
  const std::size_t U = model.n_units();
  std::vector<double> ll(U * n_reps);
  std::vector<std::size_t> fails(U * n_reps);
  const long total = static_cast<long>(U * n_reps);
  const bool par = num_threads() > 1 && total > 1;
#pragma omp parallel for schedule(dynamic) if (par)
  for (long i = 0; i < total; ++i) {
    const std::size_t u = static_cast<std::size_t>(i) / n_reps;
    const std::size_t r = static_cast<std::size_t>(i) % n_reps;
    PfilterOptions opt;
    opt.replicate = r;
    auto res = pfilter_unit(model, data, u, nat, n_particles, seed, opt);
    ll[static_cast<std::size_t>(i)] = res.loglik;
    fails[static_cast<std::size_t>(i)] = res.n_failures;
  }
  PanelLogLik out;
  double var = 0;
  for (std::size_t u = 0; u < U; ++u) {
    auto [l, se] = log_mean_exp(std::span<const double>(ll).subspan(u * n_reps, n_reps));
    out.unit_loglik.push_back(l);
    out.unit_se.push_back(se);
    out.loglik += l;
    var += se * se;
    for (std::size_t r = 0; r < n_reps; ++r) out.n_failures += fails[u * n_reps + r];
  }
  out.se = std::sqrt(var);
  return out;
}

void write_pfilter_diagnostics_csv(std::ostream& out, std::span<const PfilterResult> results) {
  out << "unit,n,cond_loglik,ess,unique_ancestors,failure_flag\n";
  for (const auto& r : results)
    for (std::size_t n = 0; n < r.cond_loglik.size(); ++n) {
      out << r.unit + 1 << ',' << n + 1 << ',' << csv::format(r.cond_loglik[n]) << ','
          << csv::format(r.ess[n]) << ',';
      if (!r.unique_ancestors.empty()) out << r.unique_ancestors[n];
      out << ',' << int(r.failed[n]) << '\n';
    }
}

}  // namespace panelfilter
