// Python bindings for the core library.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "panelfilter/errors.hpp"
#include "panelfilter/experiment.hpp"
#include "panelfilter/gaussian_cloning.hpp"
#include "panelfilter/kalman.hpp"
#include "panelfilter/models/gompertz.hpp"
#include "panelfilter/models/measles.hpp"
#include "panelfilter/particle_filter.hpp"

namespace py = pybind11;
using namespace panelfilter;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

// Rows are units, columns are observation times 1..N.
PanelData gompertz_data(const PanelModel& model, const Array& y) {
  if (y.ndim() != 2) throw py::value_error("expected a (units, times) array");
  PanelData d;
  d.obs_names = {"y"};
  const auto U = static_cast<std::size_t>(y.shape(0)), N = static_cast<std::size_t>(y.shape(1));
  for (std::size_t u = 0; u < U; ++u) {
    UnitData ud;
    const auto& t = model.unit(u).times();
    ud.times.assign(t.begin() + 1, t.end());
    ud.obs.assign(y.data() + u * N, y.data() + (u + 1) * N);
    d.units.push_back(std::move(ud));
  }
  check_data(model, d);
  return d;
}

Array panel_array(const PanelData& d) {
  const std::size_t U = d.n_units(), N = U ? d.units[0].n_obs() : 0;
  Array out({U, N});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t n = 0; n < N; ++n) m(u, n) = d.units[u].obs[n];
  return out;
}

CloningMode mode_from(const std::string& s) {
  if (s == "marginalized") return CloningMode::marginalized;
  if (s == "full") return CloningMode::full;
  if (s == "perturbed") return CloningMode::perturbed;
  throw py::value_error("mode must be marginalized, full or perturbed");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Panel particle filtering, iterated filtering and exact Gompertz benchmarks";

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<CapabilityError>(m, "CapabilityError", PyExc_RuntimeError);

  m.def("version", &software_version);

  m.def(
      "kalman_loglik",
      [](const Array& y, double a, double b, double q, double r_obs, double m0, double P0) {
        LinearGaussianSSM s{a, b, q, r_obs, m0, P0};
        return kalman_loglik(s, to_vector(y));
      },
      py::arg("y"), py::arg("a") = 1.0, py::arg("b") = 0.0, py::arg("q") = 0.0,
      py::arg("r_obs") = 0.0, py::arg("m0") = 0.0, py::arg("P0") = 0.0,
      "Exact log-likelihood of a scalar linear-Gaussian state space model.");

  m.def(
      "gompertz_exact_loglik",
      [](const Array& y, double r, double sigma2, double tau2, double K, double X0) {
        return gompertz_exact_loglik(K, r, sigma2, tau2, X0, to_vector(y));
      },
      py::arg("y"), py::arg("r"), py::arg("sigma2"), py::arg("tau2"), py::arg("K") = 1.0,
      py::arg("X0") = 1.0);

  m.def(
      "simulate_gompertz",
      [](std::size_t n_units, std::size_t n_obs, double r, double sigma2, double tau2,
         std::uint64_t seed) {
        const auto model = make_gompertz_panel(n_units, n_obs);
        return panel_array(
            simulate_panel(model, gompertz_params(model.layout_ptr(), r, sigma2, tau2), seed));
      },
      py::arg("n_units"), py::arg("n_obs"), py::arg("r") = 0.1, py::arg("sigma2") = 0.01,
      py::arg("tau2") = 0.01, py::arg("seed") = 0,
      "Simulated Gompertz panel as a (units, times) array.");

  m.def(
      "gompertz_panel_loglik",
      [](const Array& y, double r, double sigma2, double tau2, std::size_t n_particles,
         std::size_t n_reps, std::uint64_t seed) {
        if (y.ndim() != 2) throw py::value_error("expected a (units, times) array");
        const auto model = make_gompertz_panel(static_cast<std::size_t>(y.shape(0)),
                                               static_cast<std::size_t>(y.shape(1)));
        const auto data = gompertz_data(model, y);
        const auto theta = gompertz_params(model.layout_ptr(), r, sigma2, tau2);
        PanelLogLik pl;
        {
          py::gil_scoped_release release;
          pl = panel_loglik(model, data, theta, n_particles, n_reps, seed);
        }
        py::dict out;
        out["loglik"] = pl.loglik;
        out["se"] = pl.se;
        out["unit_loglik"] = pl.unit_loglik;
        out["exact"] = gompertz_exact_panel_loglik(model, data, theta);
        return out;
      },
      py::arg("y"), py::arg("r") = 0.1, py::arg("sigma2") = 0.01, py::arg("tau2") = 0.01,
      py::arg("n_particles") = 1000, py::arg("n_reps") = 1, py::arg("seed") = 0,
      "Particle log-likelihood of a Gompertz panel next to its exact value.");

  m.def(
      "systematic_resample",
      [](const Array& w, double u01) {
        const auto v = to_vector(w);
        std::vector<std::size_t> idx(v.size());
        systematic_resample(v, u01, idx);
        return idx;
      },
      py::arg("weights"), py::arg("u01"));

  m.def(
      "eulermultinom",
      [](long n, double rate1, double rate2, double dt, std::uint64_t seed) {
        StreamRng rng(seed);
        return eulermultinom(n, rate1, rate2, dt, rng);
      },
      py::arg("n"), py::arg("rate1"), py::arg("rate2"), py::arg("dt"), py::arg("seed") = 0);

  m.def(
      "gaussian_cloning",
      [](std::size_t n_units, double rho, std::size_t iterations, const std::string& mode,
         double offset, double prior_precision) {
        const auto lik = GaussianPanelLikelihood::unit_correlation(n_units, rho);
        const Eigen::VectorXd mle = gaussian_mle(lik);
        const Eigen::VectorXd mean0 =
            mle + Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_units + 1), offset);
        const Eigen::VectorXd prec0 =
            Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_units + 1), prior_precision);
        const auto tr = iterate_cloning(mean0, prec0, lik, iterations, mode_from(mode));
        const auto cond = check_convergence_condition(lik);
        py::dict out;
        out["mle"] = std::vector<double>(mle.data(), mle.data() + mle.size());
        const auto& mu = tr.mean.back();
        out["mean"] = std::vector<double>(mu.data(), mu.data() + mu.size());
        out["distance"] = (mu - mle).norm();
        out["cov_norm"] = tr.cov_norm;
        out["condition_holds"] = cond.all();
        return out;
      },
      py::arg("n_units"), py::arg("rho"), py::arg("iterations"),
      py::arg("mode") = "marginalized", py::arg("offset") = 1.0,
      py::arg("prior_precision") = 1.0);

  m.def(
      "run",
      [](const std::string& command, const std::string& config, std::optional<std::string> out) {
        std::optional<std::filesystem::path> dir;
        if (out) dir = *out;
        std::ostringstream o, e;
        int code;
        {
          py::gil_scoped_release release;
          code = run_command(command, config, dir, o, e);
        }
        return py::make_tuple(code, o.str(), e.str());
      },
      py::arg("command"), py::arg("config"), py::arg("out") = py::none(),
      "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
