#include "panelfilter/iterated_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"
#include "panelfilter/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace panelfilter {

CoolingSchedule CoolingSchedule::geometric(double factor) {
  if (!(factor > 0 && factor <= 1)) throw ConfigError("cooling factor must lie in (0, 1]");
  CoolingSchedule c;
  c.kind = Kind::geometric;
  c.factor = factor;
  return c;
}

CoolingSchedule CoolingSchedule::geometric_fraction(double fraction, double iterations) {
  if (!(fraction > 0 && fraction <= 1) || !(iterations > 0))
    throw ConfigError("cooling fraction must lie in (0, 1] over a positive horizon");
  return geometric(std::pow(fraction, 1 / iterations));
}

CoolingSchedule CoolingSchedule::polynomial(double delta) {
  if (!(delta > 0)) throw ConfigError("polynomial cooling needs delta > 0");
  CoolingSchedule c;
  c.kind = Kind::polynomial;
  c.delta = delta;
  return c;
}

double CoolingSchedule::scale(std::size_t m) const {
  const double mm = static_cast<double>(std::max<std::size_t>(m, 1));
  if (kind == Kind::geometric) return std::pow(factor, mm - 1);
  return std::pow(mm, -(1 + delta) / 2);
}

PerturbKernel PerturbKernel::defaults(const ParamLayout& layout) {
  PerturbKernel k;
  k.sd.resize(layout.dim());
  k.initial_value.resize(layout.dim());
  for (std::size_t i = 0; i < layout.dim(); ++i) {
    k.initial_value[i] = layout.spec(i).initial_value;
    k.sd[i] = k.initial_value[i] ? 0.1 : 0.02;
  }
  return k;
}

PerturbKernel PerturbKernel::from_names(const ParamLayout& layout,
                                        const std::vector<std::pair<std::string, double>>& sd) {
  PerturbKernel k = defaults(layout);
  std::fill(k.sd.begin(), k.sd.end(), 0.0);
  for (const auto& [name, v] : sd) {
    if (!(v >= 0)) throw ConfigError("perturbation sd for '" + name + "' must be >= 0");
    bool found = false;
    for (std::size_t i = 0; i < layout.dim(); ++i)
      if (layout.spec(i).name == name) {
        k.sd[i] = v;
        found = true;
      }
    if (!found) throw ConfigError("perturbation sd given for unknown parameter '" + name + "'");
  }
  return k;
}

bool PerturbKernel::active(const ParamLayout& layout, std::size_t flat, std::size_t u,
                           std::size_t n) const {
  if (!layout.is_shared(flat) && layout.unit_of(flat) != u) return false;
  if (initial_value[flat] && n != 0) return false;
  return sd[flat] > 0;
}

void perturb_particle(std::span<double> theta, const ParamLayout& layout,
                      const PerturbKernel& kernel, double scale, std::size_t u, std::size_t n,
                      StreamRng& rng) {
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (kernel.active(layout, i, u, n)) theta[i] += kernel.sd[i] * scale * z(rng);
}

void perturb(Swarm& swarm, const ParamLayout& layout, const PerturbKernel& kernel, double scale,
             std::size_t u, std::size_t n, std::uint64_t seed) {
  if (scale == 0) return;
  for (std::size_t j = 0; j < swarm.size(); ++j) {
    StreamRng rng(stream_key({seed, stream_tag::mif, u, n, j}));
    perturb_particle(swarm.particle(j), layout, kernel, scale, u, n, rng);
  }
}

void MifConfig::validate(const ParamLayout& layout) const {
  if (M < 1) throw ConfigError("M must be >= 1");
  if (J < 2) throw ConfigError("J must be >= 2");
  if (eval_J < 2) throw ConfigError("eval_J must be >= 2");
  if (eval_reps < 1) throw ConfigError("eval_reps must be >= 1");
  for (auto m : eval_schedule)
    if (m < 1 || m > M) throw ConfigError("eval_schedule entries must lie in 1..M");
  if (kernel) {
    if (kernel->sd.size() != layout.dim() || kernel->initial_value.size() != layout.dim())
      throw ConfigError("perturbation kernel does not match the parameter layout");
    for (double s : kernel->sd)
      if (!(s >= 0)) throw ConfigError("perturbation sds must be >= 0");
  }
}

ParamVector FitResult::estimate() const {
  return ParamVector(layout, final_swarm.mean(), Scale::estimation).from_estimation_scale();
}

ParamVector FitResult::estimate(std::size_t iteration) const {
  if (iteration < 1 || iteration > mean.size()) throw LookupError("iteration out of range");
  return ParamVector(layout, mean[iteration - 1], Scale::estimation).from_estimation_scale();
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

std::size_t count_distinct(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::size_t mif_unit_pass(const PanelModel& model, const PanelData& data, Swarm& swarm,
                          std::size_t u, std::size_t m, const MifConfig& config,
                          std::uint64_t seed, FitResult* result) {
  const auto& layout = model.layout();
  const auto& unit = model.unit(u);
  const auto& d = data.units[u];
  const std::size_t J = swarm.size();
  const std::size_t dim = layout.dim();
  const std::size_t ns = layout.n_shared(), nsp = layout.n_specific();
  const std::size_t ad = ns + nsp;
  const std::size_t sdim = unit.state_dim();
  const std::size_t N = unit.n_obs();
  const auto ukey = model.unit_key(u);
  const PerturbKernel kernel = config.kernel ? *config.kernel : PerturbKernel::defaults(layout);
  const double scale = config.cooling.scale(m);
  const ParamLayout view_layout(layout.shared(), layout.specific(), 1);

  auto col = [&](std::size_t c) { return c < ns ? c : layout.specific_index(u, c - ns); };

  // Active (phi, psi_u) block as a J x ad working matrix; its natural image drives the model.
  std::vector<double> sd0(ad), sdn(ad);
  for (std::size_t c = 0; c < ad; ++c) {
    const std::size_t f = col(c);
    sd0[c] = kernel.active(layout, f, u, 0) ? kernel.sd[f] * scale : 0.0;
    sdn[c] = kernel.active(layout, f, u, 1) ? kernel.sd[f] * scale : 0.0;
  }
  const bool any_dynamic = std::any_of(sdn.begin(), sdn.end(), [](double s) { return s > 0; });

  std::vector<double> W(J * ad), W_new(J * ad), th(J * ad), th_new(J * ad);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t c = 0; c < ad; ++c) W[j * ad + c] = swarm.at(j, col(c));
  std::vector<double> x(J * sdim), x_new(J * sdim), w(J);
  std::vector<std::size_t> k(J), anc(J), anc_new(J);
  std::iota(anc.begin(), anc.end(), std::size_t{0});
  const bool reindex_rest = !config.marginalize && dim > ad;
  const bool par = parallel_particles(J);

  auto record_unique = [&](std::size_t n) {
    if (!result || !config.track_unique) return;
    UniqueRecord rec{m, u, n, std::vector<std::size_t>(dim)};
    std::vector<double> v(J);
    for (std::size_t f = 0; f < dim; ++f) {
      const bool is_active = layout.is_shared(f) || layout.unit_of(f) == u;
      for (std::size_t j = 0; j < J; ++j) {
        if (is_active) {
          const std::size_t c = layout.is_shared(f) ? f : ns + (f - layout.specific_index(u, 0));
          v[j] = W[j * ad + c];
        } else {
          v[j] = swarm.at(reindex_rest ? anc[j] : j, f);
        }
      }
      rec.count[f] = count_distinct(v);
    }
    result->unique.push_back(std::move(rec));
  };

  auto perturb_row = [&](std::size_t j, const std::vector<double>& sdv, StreamRng& rng) {
    std::normal_distribution<double> z;
    for (std::size_t c = 0; c < ad; ++c)
      if (sdv[c] > 0) W[j * ad + c] += sdv[c] * z(rng);
  };
  auto refresh_theta = [&](std::size_t j) {
    view_layout.from_estimation(std::span<const double>(W).subspan(j * ad, ad),
                                std::span<double>(th).subspan(j * ad, ad));
  };

#pragma omp parallel for schedule(static) if (par)
  for (std::size_t j = 0; j < J; ++j) {
    StreamRng rng(stream_key({seed, stream_tag::mif, m, ukey, 0, j}));
    perturb_row(j, sd0, rng);
    refresh_theta(j);
    unit.rinit(std::span<const double>(th).subspan(j * ad, ad), rng,
               std::span<double>(x).subspan(j * sdim, sdim));
  }
  record_unique(0);

  std::size_t failures = 0;
  for (std::size_t n = 1; n <= N; ++n) {
    const auto y = d.y(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t j = 0; j < J; ++j) {
      StreamRng rng(stream_key({seed, stream_tag::mif, m, ukey, n, j}));
      if (any_dynamic) {
        perturb_row(j, sdn, rng);
        refresh_theta(j);
      }
      const auto tj = std::span<const double>(th).subspan(j * ad, ad);
      auto xj = std::span<double>(x).subspan(j * sdim, sdim);
      unit.rstep(xj, n, tj, rng);
      w[j] = unit.dmeasure(y, xj, n, tj);
    }
    const auto sw = normalize_log_weights(w);
    if (sw.failed) {
      ++failures;
    } else {
      StreamRng rng(stream_key({seed, stream_tag::resample, stream_tag::mif, m, ukey, n}));
      systematic_resample(w, rng.uniform(), k);
      for (std::size_t j = 0; j < J; ++j) {
        std::copy_n(x.begin() + k[j] * sdim, sdim, x_new.begin() + j * sdim);
        std::copy_n(W.begin() + k[j] * ad, ad, W_new.begin() + j * ad);
        std::copy_n(th.begin() + k[j] * ad, ad, th_new.begin() + j * ad);
      }
      x.swap(x_new);
      W.swap(W_new);
      th.swap(th_new);
      if (reindex_rest) {
        for (std::size_t j = 0; j < J; ++j) anc_new[j] = anc[k[j]];
        anc.swap(anc_new);
      }
    }
    if (result) result->steps.push_back({m, u, n, sw.cond_loglik, sw.ess, sw.failed});
    record_unique(n);
  }

  if (reindex_rest) {
    Swarm out(J, dim);
    for (std::size_t j = 0; j < J; ++j) {
      auto src = swarm.particle(anc[j]);
      std::copy(src.begin(), src.end(), out.particle(j).begin());
    }
    swarm = std::move(out);
  }
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t c = 0; c < ad; ++c) swarm.at(j, col(c)) = W[j * ad + c];
  return failures;
}

FitResult mif_panel(const PanelModel& model, const PanelData& data, Swarm swarm,
                    const MifConfig& config, std::uint64_t seed) {
  const auto& layout = model.layout();
  config.validate(layout);
  check_data(model, data);
  if (swarm.dim() != layout.dim()) throw LayoutError("swarm dimension does not match layout");
  if (swarm.size() < 2) throw ConfigError("J must be >= 2");

  FitResult fit;
  fit.layout = model.layout_ptr();
  fit.unique_tracked = config.track_unique;
  const std::size_t U = model.n_units();
  std::vector<std::size_t> order(U);
  for (std::size_t m = 1; m <= config.M; ++m) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle_units) {
      StreamRng rng(stream_key({seed, stream_tag::mif, m, 0xC0FFEEULL}));
      std::shuffle(order.begin(), order.end(), rng);
    }
    const std::size_t first_step = fit.steps.size();
    std::size_t failures = 0, total_steps = 0;
    for (std::size_t u : order) {
      failures += mif_unit_pass(model, data, swarm, u, m, config, seed, &fit);
      total_steps += model.unit(u).n_obs();
    }
    if (static_cast<double>(failures) > config.max_failure_fraction * static_cast<double>(total_steps))
      throw FilterError("iteration " + std::to_string(m) + ": " + std::to_string(failures) + " of " +
                        std::to_string(total_steps) + " filtering steps failed");
    double ll = 0;
    for (std::size_t i = first_step; i < fit.steps.size(); ++i) ll += fit.steps[i].cond_loglik;
    fit.filter_loglik.push_back(ll);
    fit.mean.push_back(swarm.mean());
    fit.sd.push_back(swarm.sd());
    if (std::find(config.eval_schedule.begin(), config.eval_schedule.end(), m) !=
        config.eval_schedule.end()) {
      const ParamVector est(model.layout_ptr(), fit.mean.back(), Scale::estimation);
      const auto ev = panel_loglik(model, data, est.from_estimation_scale(), config.eval_J,
                                   config.eval_reps, stream_key({seed, stream_tag::evaluation, m}));
      fit.evals.push_back({m, ev.loglik, ev.se});
      fit.snapshots.emplace_back(m, swarm);
    }
  }
  fit.final_swarm = std::move(swarm);
  return fit;
}

FitResult mif_panel(const PanelModel& model, const PanelData& data, const ParamVector& start,
                    const MifConfig& config, std::uint64_t seed) {
  if (!(start.layout() == model.layout())) throw LayoutError("start layout differs from model");
  config.validate(model.layout());
  const auto est = start.scale() == Scale::estimation ? start : start.to_estimation_scale();
  return mif_panel(model, data, Swarm::replicate(est, config.J), config, seed);
}

std::vector<UniqueCount> unique_particle_counts(const FitResult& fit) {
  if (!fit.unique_tracked)
    throw ConfigError("unique-particle counts need track_unique enabled in the iterated filter");
  std::vector<UniqueCount> out;
  for (const auto& r : fit.unique)
    for (std::size_t f = 0; f < r.count.size(); ++f)
      out.push_back({r.iteration, r.unit, r.n, fit.layout->flat_name(f), r.count[f]});
  return out;
}

std::vector<std::size_t> unique_counts_for(const FitResult& fit, std::size_t iteration,
                                           std::size_t unit, std::size_t flat) {
  if (!fit.unique_tracked)
    throw ConfigError("unique-particle counts need track_unique enabled in the iterated filter");
  std::vector<std::size_t> out;
  for (const auto& r : fit.unique)
    if (r.iteration == iteration && r.unit == unit) out.push_back(r.count.at(flat));
  return out;
}

double default_fit_score(const FitResult& fit) {
  if (!fit.evals.empty()) return fit.evals.back().loglik;
  if (fit.filter_loglik.empty()) throw ConfigError("fit has no iterations");
  return fit.filter_loglik.back();
}

MultistartSummary summarize_logliks(std::vector<double> ll) {
  MultistartSummary s;
  std::erase_if(ll, [](double v) { return std::isnan(v); });
  s.n_ok = ll.size();
  if (ll.empty()) {
    s.max = s.median = s.p10 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(ll.begin(), ll.end());
  auto quantile = [&](double q) {
    const double h = q * static_cast<double>(ll.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, ll.size() - 1);
    return ll[lo] + (h - static_cast<double>(lo)) * (ll[hi] - ll[lo]);
  };
  s.max = ll.back();
  s.median = quantile(0.5);
  s.p10 = quantile(0.1);
  return s;
}

MultistartResult run_multistart(const PanelModel& model, const PanelData& data,
                                const std::vector<ParamVector>& starts, const MifConfig& config,
                                std::uint64_t seed, const FitScore& score) {
  if (starts.empty()) throw ConfigError("run_multistart needs at least one start");
  config.validate(model.layout());
  MultistartResult out;
  out.runs.resize(starts.size());
  const long n = static_cast<long>(starts.size());
  const bool par = num_threads() > 1 && n > 1;
#pragma omp parallel for schedule(dynamic) if (par)
  for (long i = 0; i < n; ++i) {
    auto& run = out.runs[static_cast<std::size_t>(i)];
    try {
      run.fit = mif_panel(model, data, starts[static_cast<std::size_t>(i)], config,
                          stream_key({seed, stream_tag::multistart, static_cast<std::uint64_t>(i)}));
      run.loglik = score(*run.fit);
    } catch (const std::exception& e) {
      run.fit.reset();
      run.loglik = std::numeric_limits<double>::quiet_NaN();
      run.error = e.what();
    }
  }
  std::vector<double> ll;
  for (const auto& r : out.runs) ll.push_back(r.loglik);
  out.summary = summarize_logliks(ll);
  out.summary.n_failed = starts.size() - out.summary.n_ok;
  return out;
}

std::vector<ParamVector> sample_hypercube_starts(const ParamVector& lower,
                                                 const ParamVector& upper, std::size_t count,
                                                 std::uint64_t seed) {
  if (!(lower.layout() == upper.layout()) || lower.size() != upper.size())
    throw LayoutError("hypercube bounds use different layouts");
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (lower[i] > upper[i])
      throw DomainError("hypercube lower bound exceeds upper bound for " +
                        lower.layout().flat_name(i));
  std::vector<ParamVector> out;
  StreamRng rng(stream_key({seed, stream_tag::starts}));
  for (std::size_t s = 0; s < count; ++s) {
    ParamVector p = lower;
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = lower[i] + (upper[i] - lower[i]) * rng.uniform();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ParamVector> sample_hypercube_starts(const ParamVector& center, std::size_t count,
                                                 std::uint64_t seed) {
  ParamVector lo = center, hi = center;
  for (std::size_t i = 0; i < center.size(); ++i) {
    if (!(center[i] > 0))
      throw DomainError("default hypercube needs a positive center; got " +
                        center.layout().flat_name(i));
    lo[i] = center[i] / 2;
    hi[i] = center[i] * 2;
  }
  return sample_hypercube_starts(lo, hi, count, seed);
}

void write_fit_trace_csv(std::ostream& out, const FitResult& fit) {
  out << "iteration,param,mean,sd\n";
  const auto& layout = *fit.layout;
  std::vector<double> nat(layout.dim());
  for (std::size_t m = 0; m < fit.mean.size(); ++m) {
    layout.from_estimation(fit.mean[m], nat);
    for (std::size_t f = 0; f < layout.dim(); ++f)
      out << m + 1 << ',' << layout.flat_name(f) << ',' << csv::format(nat[f]) << ','
          << csv::format(fit.sd[m][f]) << '\n';
  }
}

void write_fit_loglik_csv(std::ostream& out, const FitResult& fit) {
  out << "iteration,loglik,loglik_se\n";
  for (const auto& e : fit.evals)
    out << e.iteration << ',' << csv::format(e.loglik) << ',' << csv::format(e.se) << '\n';
}

void write_fit_diagnostics_csv(std::ostream& out, const FitResult& fit) {
  out << "iteration,unit,n,cond_loglik,ess,failure_flag,param,unique_count\n";
  const auto& layout = *fit.layout;
  std::size_t r = 0;
  for (const auto& s : fit.steps) {
    const std::string prefix = std::to_string(s.iteration) + ',' + std::to_string(s.unit + 1) +
                               ',' + std::to_string(s.n) + ',' + csv::format(s.cond_loglik) +
                               ',' + csv::format(s.ess) + ',' + (s.failed ? "1" : "0") + ',';
    // Unique records carry n = 0 entries too; skip to the one matching this step.
    while (r < fit.unique.size() && fit.unique[r].n == 0) ++r;
    if (fit.unique_tracked && r < fit.unique.size()) {
      const auto& rec = fit.unique[r++];
      for (std::size_t f = 0; f < layout.dim(); ++f)
        out << prefix << layout.flat_name(f) << ',' << rec.count[f] << '\n';
    } else {
      out << prefix << ",\n";
    }
  }
}

}  // namespace panelfilter
