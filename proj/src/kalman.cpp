#include "panelfilter/kalman.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_min.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>

#include "panelfilter/errors.hpp"
#include "panelfilter/models/gompertz.hpp"
#include "panelfilter/rng.hpp"

namespace panelfilter {

KalmanTrace kalman_filter(const LinearGaussianSSM& s, std::span<const double> y) {
  if (s.q < 0 || s.r_obs < 0 || s.P0 < 0) throw DomainError("Kalman variances must be >= 0");
  KalmanTrace tr;
  const std::size_t n = y.size();
  tr.pred_mean.resize(n);
  tr.pred_var.resize(n);
  tr.filter_mean.resize(n);
  tr.filter_var.resize(n);
  double m = s.m0, P = s.P0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw DomainError("Kalman observations must be finite");
    const double mp = s.a * m + s.b;
    const double Pp = s.a * s.a * P + s.q;
    const double S = Pp + s.r_obs;
    if (!(S > 0)) throw NumericError("Kalman predictive variance is not positive");
    const double e = y[i] - mp;
    tr.loglik += -0.5 * (std::log(2 * std::numbers::pi * S) + e * e / S);
    const double gain = Pp / S;
    m = mp + gain * e;
    P = Pp * s.r_obs / S;  // (1 - gain) Pp, kept nonnegative
    tr.pred_mean[i] = mp;
    tr.pred_var[i] = Pp;
    tr.filter_mean[i] = m;
    tr.filter_var[i] = P;
  }
  return tr;
}

double kalman_loglik(const LinearGaussianSSM& s, std::span<const double> y) {
  if (s.q < 0 || s.r_obs < 0 || s.P0 < 0) throw DomainError("Kalman variances must be >= 0");
  double m = s.m0, P = s.P0, ll = 0;
  for (double v : y) {
    if (!std::isfinite(v)) throw DomainError("Kalman observations must be finite");
    const double mp = s.a * m + s.b;
    const double Pp = s.a * s.a * P + s.q;
    const double S = Pp + s.r_obs;
    if (!(S > 0)) throw NumericError("Kalman predictive variance is not positive");
    const double e = v - mp;
    ll += -0.5 * (std::log(2 * std::numbers::pi * S) + e * e / S);
    m = mp + Pp / S * e;
    P = Pp * s.r_obs / S;
  }
  return ll;
}

LinearGaussianSSM gompertz_to_lgssm(double K, double r, double sigma2, double tau2, double X0) {
  if (!(K > 0) || !(X0 > 0) || !(r > 0) || sigma2 < 0 || tau2 < 0)
    throw DomainError("Gompertz needs K, X0, r > 0 and nonnegative variances");
  LinearGaussianSSM s;
  s.a = std::exp(-r);
  s.b = (1 - s.a) * std::log(K);
  s.q = sigma2;
  s.r_obs = tau2;
  s.m0 = std::log(X0);
  s.P0 = 0;
  return s;
}

double gompertz_exact_loglik(double K, double r, double sigma2, double tau2, double X0,
                             std::span<const double> y) {
  std::vector<double> ly(y.size());
  double jac = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0)) return -std::numeric_limits<double>::infinity();
    ly[i] = std::log(y[i]);
    jac -= ly[i];
  }
  return kalman_loglik(gompertz_to_lgssm(K, r, sigma2, tau2, X0), ly) + jac;
}

std::vector<double> gompertz_exact_unit_loglik(const PanelModel& model, const PanelData& data,
                                               const ParamVector& params) {
  check_data(model, data);
  const auto& layout = model.layout();
  const auto ir = layout.unit_view_index("r"), is = layout.unit_view_index("sigma2"),
             it = layout.unit_view_index("tau2");
  if (!ir || !is || !it) throw LayoutError("exact likelihood needs the Gompertz layout");
  std::vector<double> out(model.n_units());
  std::vector<double> th(layout.unit_dim());
  std::vector<double> y;
  for (std::size_t u = 0; u < model.n_units(); ++u) {
    const auto* unit = dynamic_cast<const GompertzUnit*>(&model.unit(u));
    if (!unit) throw CapabilityError("exact likelihood is available for Gompertz units only");
    layout.unit_view(params.values(), u, th);
    const auto& d = data.units[u];
    y.assign(d.obs.begin(), d.obs.end());
    out[u] = gompertz_exact_loglik(unit->K(), th[*ir], th[*is], th[*it], unit->X0(), y);
  }
  return out;
}

double gompertz_exact_panel_loglik(const PanelModel& model, const PanelData& data,
                                   const ParamVector& params) {
  double total = 0;
  for (double l : gompertz_exact_unit_loglik(model, data, params)) total += l;
  return total;
}

namespace {

struct Objective {
  const PanelModel* model;
  const PanelData* data;
  std::size_t evaluations = 0;
  std::vector<double> natural;
  double operator()(std::span<const double> est) {
    ++evaluations;
    model->layout().from_estimation(est, natural);
    ParamVector p(model->layout_ptr(), natural);
    const double l = gompertz_exact_panel_loglik(*model, *data, p);
    return std::isfinite(l) ? -l : 1e300;
  }
};

double gsl_objective(const gsl_vector* x, void* params) {
  auto* obj = static_cast<Objective*>(params);
  return (*obj)(std::span<const double>(x->data, x->size));
}

struct MinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};
struct VectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};

// One Nelder-Mead run; returns the final point and objective value.
std::pair<std::vector<double>, double> nelder_mead(Objective& obj, std::vector<double> x0,
                                                   double tolerance, std::size_t max_iter) {
  const std::size_t d = x0.size();
  gsl_multimin_function f{&gsl_objective, d, &obj};
  std::unique_ptr<gsl_vector, VectorDeleter> x(gsl_vector_alloc(d)), step(gsl_vector_alloc(d));
  for (std::size_t i = 0; i < d; ++i) gsl_vector_set(x.get(), i, x0[i]);
  gsl_vector_set_all(step.get(), 0.1);
  std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter> m(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, d));
  gsl_multimin_fminimizer_set(m.get(), &f, x.get(), step.get());
  // Also stop once the best value has stalled; rounding can keep the simplex
  // from shrinking below the tolerance.
  double last = m->fval;
  std::size_t since = 0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(m.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_fminimizer_size(m.get()) < tolerance) break;
    if (m->fval < last - 1e-12 * (1 + std::abs(last))) {
      last = m->fval;
      since = 0;
    } else if (++since > 200 * d) {
      break;
    }
  }
  std::vector<double> best(d);
  for (std::size_t i = 0; i < d; ++i) best[i] = gsl_vector_get(m->x, i);
  return {best, m->fval};
}

// Log-scale observations of every unit, for repeated exact evaluations.
struct LogPanel {
  std::vector<const GompertzUnit*> units;
  std::vector<std::vector<double>> log_y;
  std::vector<double> jacobian;
};

std::optional<LogPanel> log_panel(const PanelModel& model, const PanelData& data) {
  LogPanel lp;
  for (std::size_t u = 0; u < model.n_units(); ++u) {
    const auto* unit = dynamic_cast<const GompertzUnit*>(&model.unit(u));
    if (!unit) throw CapabilityError("exact likelihood is available for Gompertz units only");
    std::vector<double> ly;
    double jac = 0;
    for (double y : data.units[u].obs) {
      if (!(y > 0)) return std::nullopt;
      ly.push_back(std::log(y));
      jac -= ly.back();
    }
    lp.units.push_back(unit);
    lp.log_y.push_back(std::move(ly));
    lp.jacobian.push_back(jac);
  }
  return lp;
}

// With the shared (r, sigma2) fixed the likelihood separates over units, so each
// log tau2 is maximized on its own: a coarse grid, then Brent inside the best cell.
struct Profile {
  const LogPanel* panel;
  std::size_t evaluations = 0;
  std::vector<double> log_tau2;

  double unit_loglik(std::size_t u, double r, double sigma2, double log_tau2) {
    ++evaluations;
    const auto* unit = panel->units[u];
    const auto s = gompertz_to_lgssm(unit->K(), r, sigma2, std::exp(log_tau2), unit->X0());
    const double l = kalman_loglik(s, panel->log_y[u]) + panel->jacobian[u];
    return std::isfinite(l) ? l : -1e300;
  }

  // Maximum over log tau2.
  double unit_max(std::size_t u, double r, double sigma2) {
    auto f = [&](double z) { return unit_loglik(u, r, sigma2, z); };
    constexpr double lo = -30, hi = 10;
    // A fixed grid keeps the profile a pure function of (r, sigma2).
    constexpr double glo = -16, ghi = 4, h = 1.0;
    const int n = static_cast<int>((ghi - glo) / h) + 1;
    int best = 0;
    double best_g = -INFINITY;
    for (int i = 0; i < n; ++i) {
      const double l = f(glo + i * h);
      if (l > best_g) {
        best_g = l;
        best = i;
      }
    }
    double xm = glo + best * h, fm = best_g;
    double xa = xm - h, xb = xm + h, fa, fb;
    fa = f(xa);
    fb = f(xb);
    // Walk downhill until the middle point is the best of three.
    for (int it = 0; it < 60 && (fa > fm || fb > fm); ++it) {
      if (fa > fm) {
        const double step = 2 * (xm - xa);
        xb = xm, fb = fm, xm = xa, fm = fa;
        xa = std::max(lo, xm - step);
        fa = f(xa);
      } else {
        const double step = 2 * (xb - xm);
        xa = xm, fa = fm, xm = xb, fm = fb;
        xb = std::min(hi, xm + step);
        fb = f(xb);
      }
      if (xa <= lo || xb >= hi) break;
    }
    double x = xm, best_l = fm;
    if (fa > best_l) x = xa, best_l = fa;
    if (fb > best_l) x = xb, best_l = fb;
    if (x == xm) {
      struct Ctx {
        Profile* p;
        std::size_t u;
        double r, sigma2;
      } ctx{this, u, r, sigma2};
      gsl_function g{[](double z, void* c) {
                       auto* k = static_cast<Ctx*>(c);
                       return -k->p->unit_loglik(k->u, k->r, k->sigma2, z);
                     },
                     &ctx};
      std::unique_ptr<gsl_min_fminimizer, void (*)(gsl_min_fminimizer*)> m(
          gsl_min_fminimizer_alloc(gsl_min_fminimizer_brent), gsl_min_fminimizer_free);
      if (fa != fm && fb != fm &&
          gsl_min_fminimizer_set_with_values(m.get(), &g, xm, -fm, xa, -fa, xb, -fb) ==
              GSL_SUCCESS) {
        for (int it = 0; it < 100; ++it) {
          if (gsl_min_fminimizer_iterate(m.get()) != GSL_SUCCESS) break;
          if (gsl_min_test_interval(gsl_min_fminimizer_x_lower(m.get()),
                                    gsl_min_fminimizer_x_upper(m.get()), 1e-7, 0) == GSL_SUCCESS)
            break;
        }
        if (-gsl_min_fminimizer_f_minimum(m.get()) >= best_l) {
          x = gsl_min_fminimizer_x_minimum(m.get());
          best_l = -gsl_min_fminimizer_f_minimum(m.get());
        }
      }
    }
    log_tau2[u] = x;
    return best_l;
  }

  double operator()(double log_r, double log_sigma2) {
    const double r = std::exp(log_r), s2 = std::exp(log_sigma2);
    double total = 0;
    for (std::size_t u = 0; u < panel->units.size(); ++u) total += unit_max(u, r, s2);
    return total;
  }
};

double gsl_profile(const gsl_vector* x, void* params) {
  auto* p = static_cast<Profile*>(params);
  // Outside this box the likelihood is flat enough to stall the simplex.
  const double lr = gsl_vector_get(x, 0), ls = gsl_vector_get(x, 1);
  if (!(lr > -12 && lr < 4 && ls > -30 && ls < 6)) return 1e300;
  const double l = (*p)(gsl_vector_get(x, 0), gsl_vector_get(x, 1));
  return std::isfinite(l) ? -l : 1e300;
}

std::pair<std::vector<double>, double> nelder_mead_2d(Profile& p, std::vector<double> x0,
                                                      double tolerance, std::size_t max_iter) {
  constexpr std::size_t d = 2;
  gsl_multimin_function f{&gsl_profile, 2, &p};
  std::unique_ptr<gsl_vector, VectorDeleter> x(gsl_vector_alloc(2)), step(gsl_vector_alloc(2));
  for (std::size_t i = 0; i < 2; ++i) gsl_vector_set(x.get(), i, x0[i]);
  gsl_vector_set_all(step.get(), 0.1);
  std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter> m(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2));
  gsl_multimin_fminimizer_set(m.get(), &f, x.get(), step.get());
  // Also stop once the best value has stalled; rounding can keep the simplex
  // from shrinking below the tolerance.
  double last = m->fval;
  std::size_t since = 0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(m.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_fminimizer_size(m.get()) < tolerance) break;
    if (m->fval < last - 1e-12 * (1 + std::abs(last))) {
      last = m->fval;
      since = 0;
    } else if (++since > 200 * d) {
      break;
    }
  }
  return {{gsl_vector_get(m->x, 0), gsl_vector_get(m->x, 1)}, m->fval};
}

bool standard_gompertz_layout(const ParamLayout& l) {
  return l.n_shared() == 2 && l.n_specific() == 1 && l.shared()[0].name == "r" &&
         l.shared()[1].name == "sigma2" && l.specific()[0].name == "tau2" &&
         l.shared()[0].transform == Transform::log && l.shared()[1].transform == Transform::log &&
         l.specific()[0].transform == Transform::log;
}

}  // namespace

ExactMaxResult maximize_exact(const PanelModel& model, const PanelData& data,
                              const ExactMaxOptions& options) {
  const auto& layout = model.layout();
  const std::size_t d = layout.dim();
  if (d > options.max_dim)
    throw CapabilityError("exact maximization supports at most " +
                          std::to_string(options.max_dim) + " free parameters, got " +
                          std::to_string(d));
  check_data(model, data);
  gsl_set_error_handler_off();

  ParamVector start = options.start ? *options.start
                                    : gompertz_params(model.layout_ptr(), 0.1, 0.01, 0.01);
  std::vector<double> center(d);
  layout.to_estimation(start.values(), center);

  StreamRng rng(stream_key({options.seed, stream_tag::optimizer}));
  std::uniform_real_distribution<double> jitter(-std::log(2.0), std::log(2.0));
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);

  const auto panel = standard_gompertz_layout(layout) ? log_panel(model, data) : std::nullopt;
  if (panel) {
    Profile prof{&*panel, 0, std::vector<double>(model.n_units())};
    std::vector<double> best{center[0], center[1]};
    double best_f = -prof(best[0], best[1]);
    std::vector<double> best_tau = prof.log_tau2;
    for (std::size_t k = 0; k < restarts; ++k) {
      std::vector<double> x0{center[0], center[1]};
      if (k > 0)
        for (auto& v : x0) v += jitter(rng);
      auto [x, f] = nelder_mead_2d(prof, x0, options.tolerance, options.max_iterations);
      for (int polish = 0; polish < 5; ++polish) {
        auto [x2, f2] = nelder_mead_2d(prof, x, options.tolerance, options.max_iterations);
        const bool improved = f2 < f - 1e-10;
        if (f2 <= f) {
          x = x2;
          f = f2;
        }
        if (!improved) break;
      }
      if (f < best_f) {
        best_f = f;
        best = x;
      }
    }
    // Re-run the inner step at the winner so the unit values match it.
    const double ll = prof(best[0], best[1]);
    ParamVector est(model.layout_ptr(), Scale::estimation);
    est[0] = best[0];
    est[1] = best[1];
    for (std::size_t u = 0; u < model.n_units(); ++u)
      est[layout.specific_index(u, 0)] = prof.log_tau2[u];
    ExactMaxResult res;
    res.params = est.from_estimation_scale();
    res.loglik = ll;
    res.evaluations = prof.evaluations;
    return res;
  }

  Objective obj{&model, &data, 0, {}};
  obj.natural.resize(d);
  std::vector<double> best = center;
  double best_f = obj(best);
  for (std::size_t k = 0; k < restarts; ++k) {
    std::vector<double> x0 = center;
    if (k > 0)
      for (auto& v : x0) v += jitter(rng);
    auto [x, f] = nelder_mead(obj, x0, options.tolerance, options.max_iterations);
    // Restart from the converged point until the simplex stops improving.
    for (int polish = 0; polish < 5; ++polish) {
      auto [x2, f2] = nelder_mead(obj, x, options.tolerance, options.max_iterations);
      const bool improved = f2 < f - 1e-10;
      if (f2 <= f) {
        x = x2;
        f = f2;
      }
      if (!improved) break;
    }
    if (f < best_f) {
      best_f = f;
      best = x;
    }
  }
  ExactMaxResult res;
  std::vector<double> nat(d);
  layout.from_estimation(best, nat);
  res.params = ParamVector(model.layout_ptr(), nat);
  res.loglik = -best_f;
  res.evaluations = obj.evaluations;
  return res;
}

}  // namespace panelfilter
