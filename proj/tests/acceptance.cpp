// Acceptance suite: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "panelfilter/csv.hpp"
#include "panelfilter/gaussian_cloning.hpp"
#include "panelfilter/iterated_filter.hpp"
#include "panelfilter/kalman.hpp"
#include "panelfilter/models/measles.hpp"
#include "panelfilter/rng.hpp"

namespace fs = std::filesystem;
using namespace panelfilter;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli_path;
fs::path work;

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

void write_config(const fs::path& p, const std::map<std::string, std::string>& kv) {
  std::ofstream f(p);
  for (const auto& [k, v] : kv) f << k << " = " << v << '\n';
}

// Runs the command-line tool; returns its exit status.
int run_cli(const std::string& command, const fs::path& cfg, const fs::path& out, int threads) {
  fs::remove_all(out);
  const std::string cmd = "\"" + cli_path + "\" --threads " + std::to_string(threads) + " " +
                          command + " \"" + cfg.string() + "\" --out \"" + out.string() +
                          "\" > \"" + (out.string() + ".log") + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// limit <= 0: no runtime bound.
Outcome timed(double limit, double elapsed, Outcome o) {
  o.detail += "; " + fmt(elapsed, 4) + " s";
  if (limit > 0) o.detail += " (limit " + fmt(limit) + " s)";
  if (limit > 0 && elapsed >= limit) o.pass = false;
  return o;
}

// ---------------------------------------------------------------- Kalman oracle

Outcome ac1() {
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> U(-1, 1), V(0.1, 2);
  std::normal_distribution<double> Z;
  double worst = 0;
  const int N = 5;
  for (int rep = 0; rep < 20; ++rep) {
    LinearGaussianSSM s;
    s.a = U(gen);
    s.b = U(gen);
    s.q = V(gen);
    s.r_obs = V(gen);
    s.m0 = U(gen);
    s.P0 = V(gen);
    std::vector<double> y(N);
    for (auto& v : y) v = 2 * Z(gen);
    // Joint law of y_{1:N}: x_n = a^n x_0 + sum a^{n-k} (b + e_k).
    Eigen::VectorXd mean(N);
    Eigen::MatrixXd cov(N, N);
    std::vector<double> mx(N + 1);
    mx[0] = s.m0;
    for (int n = 1; n <= N; ++n) mx[n] = s.a * mx[n - 1] + s.b;
    for (int i = 1; i <= N; ++i) {
      mean(i - 1) = mx[i];
      for (int j = 1; j <= N; ++j) {
        const int lo = std::min(i, j);
        double c = std::pow(s.a, i + j) * s.P0;
        for (int k = 1; k <= lo; ++k) c += std::pow(s.a, i - k) * std::pow(s.a, j - k) * s.q;
        cov(i - 1, j - 1) = c + (i == j ? s.r_obs : 0);
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(y.data(), N) - mean;
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    double logdet = 0;
    for (int i = 0; i < N; ++i) logdet += 2 * std::log(llt.matrixL()(i, i));
    const double direct = -0.5 * (N * std::log(2 * M_PI) + logdet + w.squaredNorm());
    worst = std::max(worst, std::abs(direct - kalman_loglik(s, y)));
  }
  return {worst <= 1e-10, "max |kalman - direct| = " + fmt(worst)};
}

// ---------------------------------------------------------------- particle filter

std::map<std::string, std::string> ac2_config() {
  return {{"preset", "gompertz-bench"}, {"model", "gompertz"}, {"seed", "42"}, {"U", "5"},
          {"N", "50"}, {"J", "2000"}, {"reps", "10"}, {"r", "0.1"}, {"sigma2", "0.01"},
          {"tau2", "0.01"}};
}

Outcome ac2() {
  const fs::path cfg = work / "ac2.cfg", out = work / "ac2_t1";
  write_config(cfg, ac2_config());
  const int rc = run_cli("loglik", cfg, out, 1);
  if (rc != 0) return {false, "loglik exited with " + std::to_string(rc)};
  const auto t = csv::read_file((out / "summary.csv").string());
  const auto cu = t.column("unit"), cl = t.column("loglik"), ce = t.column("exact_loglik");
  for (const auto& row : t.rows)
    if (row[cu] == "total") {
      const double pf = csv::to_double(row[cl]), ex = csv::to_double(row[ce]);
      return {std::abs(pf - ex) <= 1.0,
              "particle " + fmt(pf, 8) + " vs exact " + fmt(ex, 8) + " (diff " + fmt(pf - ex) + ")"};
    }
  return {false, "no total row"};
}

// ---------------------------------------------------------------- MPIF vs PIF

std::map<std::string, std::string> ac3_config() {
  return {{"preset", "gompertz-bench"}, {"seed", "2024"}, {"U", "50"}, {"N", "50"},
          {"J", "500"}, {"M", "30"}, {"n_starts", "10"}, {"algorithm", "both"}};
}

Outcome ac3() {
  const fs::path cfg = work / "ac3.cfg", out = work / "ac3_t1";
  write_config(cfg, ac3_config());
  const int rc = run_cli("run", cfg, out, 1);
  if (rc != 0) return {false, "run exited with " + std::to_string(rc)};
  const auto t = csv::read_file((out / "summary.csv").string());
  const auto ca = t.column("algorithm"), cl = t.column("final_loglik"),
             cr = t.column("reference_loglik");
  std::map<std::string, std::vector<double>> ll;
  double reference = NAN;
  for (const auto& row : t.rows) {
    ll[row[ca]].push_back(row[cl].empty() ? NAN : csv::to_double(row[cl]));
    if (!row[cr].empty()) reference = csv::to_double(row[cr]);
  }
  if (ll["mpif"].size() != 10 || ll["pif"].size() != 10) return {false, "expected 10 runs each"};
  const auto m = summarize_logliks(ll["mpif"]), p = summarize_logliks(ll["pif"]);
  const double slack = 0.5;
  const bool ok = m.n_ok == 10 && p.n_ok == 10 && m.max >= p.max - slack &&
                  m.p10 >= p.median - slack;
  return {ok, "MPIF max " + fmt(m.max, 8) + " p10 " + fmt(m.p10, 8) + "; PIF max " +
                  fmt(p.max, 8) + " median " + fmt(p.median, 8) + "; exact max " +
                  fmt(reference, 8)};
}

// ---------------------------------------------------------------- depletion

Outcome ac4() {
  const fs::path cfg = work / "ac4.cfg", out = work / "ac4";
  write_config(cfg, {{"preset", "depletion"}, {"seed", "7"}, {"U", "2"}, {"N", "100"},
                     {"J", "1000"}, {"algorithm", "both"}});
  const int rc = run_cli("run", cfg, out, 1);
  if (rc != 0) return {false, "run exited with " + std::to_string(rc)};
  const auto t = csv::read_file((out / "diagnostics.csv").string());
  const auto ca = t.column("algorithm"), cu = t.column("unit"), cn = t.column("n"),
             cp = t.column("param"), cc = t.column("unique_count");
  long mpif_min = -1, mpif_max = -1, pif_final = -1, steps = 0, last_n = -1;
  for (const auto& row : t.rows) {
    if (row[cp] != "psi[2]" || row[cu] != "1") continue;
    const long count = csv::to_long(row[cc]), n = csv::to_long(row[cn]);
    if (row[ca] == "mpif") {
      mpif_min = mpif_min < 0 ? count : std::min(mpif_min, count);
      mpif_max = std::max(mpif_max, count);
      if (n >= 1) ++steps;
    } else if (row[ca] == "pif" && n >= last_n) {
      last_n = n;
      pif_final = count;
    }
  }
  const bool ok = steps == 100 && mpif_min == 1000 && mpif_max == 1000 && pif_final >= 0 &&
                  pif_final < 200;
  return {ok, "MPIF psi[2] unique in [" + std::to_string(mpif_min) + ", " +
                  std::to_string(mpif_max) + "] over " + std::to_string(steps) +
                  " steps; PIF final " + std::to_string(pif_final)};
}

// ---------------------------------------------------------------- Gaussian cloning

// Normal equations assembled directly from the unit blocks.
Eigen::VectorXd normal_equation_mle(const GaussianPanelLikelihood& lik) {
  const auto d = static_cast<Eigen::Index>(lik.dim());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (std::size_t u = 0; u < lik.n_units(); ++u) {
    const Eigen::Index idx[2] = {0, static_cast<Eigen::Index>(u + 1)};
    const Eigen::Vector2d pb = lik.precision[u] * lik.optimum[u];
    for (int i = 0; i < 2; ++i) {
      b(idx[i]) += pb(i);
      for (int j = 0; j < 2; ++j) A(idx[i], idx[j]) += lik.precision[u](i, j);
    }
  }
  return A.ldlt().solve(b);
}

double max_var(const Eigen::VectorXd& v) { return v.maxCoeff(); }

Outcome ac5() {
  const auto lik = GaussianPanelLikelihood::unit_correlation(2, 0.3, 0.7, -0.4);
  const Eigen::VectorXd mle = normal_equation_mle(lik);
  const Eigen::VectorXd mean0 = mle + Eigen::VectorXd::Ones(3);
  const Eigen::VectorXd prec0 = Eigen::VectorXd::Ones(3);
  const auto cond = check_convergence_condition(lik);
  const auto tr = iterate_cloning(mean0, prec0, lik, 10000, CloningMode::marginalized);
  const double dist = (tr.mean.back() - mle).norm();
  const double s3 = max_var(tr.variance[999]) * 1e3, s4 = max_var(tr.variance[9999]) * 1e4;
  const double ratio = s4 / s3;
  const bool ok = cond.all() && dist < 1e-8 && std::abs(ratio - 1) <= 0.1;
  return {ok, "|mu - mle| = " + fmt(dist) + " (need < 1e-8); var*M at 1e3 " + fmt(s3) +
                  ", at 1e4 " + fmt(s4) + " (ratio " + fmt(ratio) + ")"};
}

Outcome ac6() {
  const auto lik = GaussianPanelLikelihood::unit_correlation(2, 0.3, 0.7, -0.4);
  const Eigen::VectorXd mle = normal_equation_mle(lik);
  const Eigen::VectorXd mean0 = mle + Eigen::VectorXd::Ones(3);
  const Eigen::VectorXd prec0 = Eigen::VectorXd::Ones(3);
  PerturbSchedule sched;
  sched.sigma1_sq = 1.0;
  sched.exponent = 1.5;
  const auto tr = iterate_cloning(mean0, prec0, lik, 10000, CloningMode::perturbed, sched);
  const double dist = (tr.mean.back() - mle).norm();
  const double v2 = max_var(tr.variance[99]), v3 = max_var(tr.variance[999]),
               v4 = max_var(tr.variance[9999]);
  const bool ok = dist < 1e-6 && v4 < v3 && v3 < v2 && v4 < 1e-3;
  return {ok, "|mu - mle| = " + fmt(dist) + " (need < 1e-6); max var at 1e2/1e3/1e4 " + fmt(v2) +
                  " / " + fmt(v3) + " / " + fmt(v4)};
}

Outcome ac7() {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> Z;
  std::uniform_real_distribution<double> P(0.2, 3);
  std::uniform_int_distribution<int> nu(1, 6);
  double worst = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t U = static_cast<std::size_t>(nu(gen));
    GaussianPanelLikelihood lik;
    for (std::size_t u = 0; u < U; ++u) {
      Eigen::Matrix2d A;
      A << Z(gen), Z(gen), Z(gen), Z(gen);
      lik.precision.push_back(A * A.transpose() + 0.1 * Eigen::Matrix2d::Identity());
      lik.optimum.emplace_back(Z(gen), Z(gen));
    }
    DiagonalBelief b;
    b.mean.resize(U + 1);
    b.precision.resize(U + 1);
    for (std::size_t k = 0; k <= U; ++k) {
      b.mean(k) = Z(gen);
      b.precision(k) = P(gen);
    }
    const std::size_t u = static_cast<std::size_t>(gen() % U);
    // Full conjugate update, then keep only the marginal variances.
    const auto d = static_cast<Eigen::Index>(U + 1);
    Eigen::MatrixXd prec = b.precision.asDiagonal();
    Eigen::VectorXd rhs = b.precision.cwiseProduct(b.mean);
    const Eigen::Index idx[2] = {0, static_cast<Eigen::Index>(u + 1)};
    const Eigen::Vector2d pb = lik.precision[u] * lik.optimum[u];
    for (int i = 0; i < 2; ++i) {
      rhs(idx[i]) += pb(i);
      for (int j = 0; j < 2; ++j) prec(idx[i], idx[j]) += lik.precision[u](i, j);
    }
    const Eigen::MatrixXd cov = prec.inverse();
    const Eigen::VectorXd mean = cov * rhs;
    const auto got = marginalized_update(b, lik, u);
    for (Eigen::Index k = 0; k < d; ++k) {
      worst = std::max(worst, std::abs(got.mean(k) - mean(k)) / std::max(1.0, std::abs(mean(k))));
      const double p = 1 / cov(k, k);
      worst = std::max(worst, std::abs(got.precision(k) - p) / std::max(1.0, std::abs(p)));
    }
  }
  return {worst <= 1e-12, "max relative difference " + fmt(worst)};
}

Outcome ac8() {
  std::mt19937_64 gen(88);
  std::normal_distribution<double> Z;
  std::uniform_int_distribution<int> nd(1, 6);
  const double c = 0.9;
  double worst = 0, disagreement = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int d = nd(gen);
    std::vector<Eigen::Matrix2d> B(static_cast<std::size_t>(d));
    for (auto& m : B) {
      m << Z(gen), Z(gen), Z(gen), Z(gen);
      m *= c / Eigen::JacobiSVD<Eigen::Matrix2d>(m).singularValues()(0);
    }
    Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(d + 1, d + 1);
    for (int k = 1; k <= d; ++k) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Identity(d + 1, d + 1);
      const auto& b = B[static_cast<std::size_t>(k - 1)];
      A(0, 0) = b(0, 0);
      A(0, k) = b(0, 1);
      A(k, 0) = b(1, 0);
      A(k, k) = b(1, 1);
      prod = A * prod;
    }
    const double n = Eigen::JacobiSVD<Eigen::MatrixXd>(prod).singularValues()(0);
    worst = std::max(worst, n);
    disagreement = std::max(disagreement, std::abs(n - block_product_norm(B)));
  }
  return {worst <= c + 1e-12 && disagreement <= 1e-12,
          "largest product norm " + fmt(worst, 15) + "; library vs SVD " + fmt(disagreement)};
}

// ---------------------------------------------------------------- Euler-multinomial

Outcome ac9() {
  const double rate = std::log(2.0) / 2, dt = 1.0;
  const long draws = 100000;
  StreamRng rng(stream_key({9, 1}));
  long c[3] = {0, 0, 0};
  for (long i = 0; i < draws; ++i) {
    const auto [a, b] = eulermultinom(1, rate, rate, dt, rng);
    c[a == 1 ? 1 : b == 1 ? 2 : 0]++;
  }
  const double p[3] = {0.5, 0.25, 0.25};
  double worst_z = 0;
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(p[k] * (1 - p[k]) / draws);
    worst_z = std::max(worst_z, std::abs(static_cast<double>(c[k]) / draws - p[k]) / se);
  }
  // First destination out of 20 is Binomial(20, 1/4).
  const long n = 20;
  std::vector<long> hist(n + 1, 0);
  StreamRng rng2(stream_key({9, 2}));
  for (long i = 0; i < draws; ++i) hist[static_cast<std::size_t>(eulermultinom(n, rate, rate, dt, rng2).first)]++;
  std::vector<double> expected(n + 1);
  for (long k = 0; k <= n; ++k)
    expected[static_cast<std::size_t>(k)] =
        draws * std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                         k * std::log(0.25) + (n - k) * std::log(0.75));
  // Pool sparse upper tail bins.
  std::vector<double> obs_b, exp_b;
  double po = 0, pe = 0;
  for (std::size_t k = 0; k <= static_cast<std::size_t>(n); ++k) {
    po += static_cast<double>(hist[k]);
    pe += expected[k];
    if (pe >= 5 && k < static_cast<std::size_t>(n)) {
      double tail = 0;
      for (std::size_t j = k + 1; j <= static_cast<std::size_t>(n); ++j) tail += expected[j];
      if (tail >= 5) {
        obs_b.push_back(po);
        exp_b.push_back(pe);
        po = pe = 0;
      }
    }
  }
  obs_b.push_back(po);
  exp_b.push_back(pe);
  double chi2 = 0;
  for (std::size_t i = 0; i < obs_b.size(); ++i)
    chi2 += (obs_b[i] - exp_b[i]) * (obs_b[i] - exp_b[i]) / exp_b[i];
  const double pval = gsl_cdf_chisq_Q(chi2, static_cast<double>(obs_b.size() - 1));
  return {worst_z <= 3 && pval > 0.01,
          "frequencies " + fmt(c[0] / double(draws)) + "/" + fmt(c[1] / double(draws)) + "/" +
              fmt(c[2] / double(draws)) + " (max z " + fmt(worst_z, 3) + "); chi-square p " +
              fmt(pval, 3)};
}

// ---------------------------------------------------------------- measles smoke test

Outcome ac10() {
  int increased = 0, ran = 0;
  std::string values;
  for (int seed = 1; seed <= 10; ++seed) {
    const fs::path cfg = work / ("ac10_" + std::to_string(seed) + ".cfg");
    const fs::path out = work / ("ac10_" + std::to_string(seed));
    write_config(cfg, {{"preset", "measles-sim"}, {"seed", std::to_string(seed)},
                       {"variant", "7-shared"}, {"years", "2"}, {"J", "500"}, {"M", "10"},
                       {"eval_every", "1"}, {"eval_J", "500"}});
    if (run_cli("run", cfg, out, 1) != 0) continue;
    const auto t = csv::read_file((out / "diagnostics.csv").string());
    const auto ci = t.column("iteration"), ce = t.column("eval_loglik");
    double first = NAN, last = NAN;
    for (const auto& row : t.rows) {
      if (row[ce].empty()) continue;
      if (row[ci] == "1") first = csv::to_double(row[ce]);
      if (row[ci] == "10") last = csv::to_double(row[ce]);
    }
    if (std::isnan(first) || std::isnan(last)) continue;
    ++ran;
    if (last > first) ++increased;
    values += (values.empty() ? "" : " ") + fmt(last - first, 4);
  }
  return {increased >= 8, std::to_string(increased) + " of 10 runs increased (" +
                              std::to_string(ran) + " completed); gains " + values};
}

// ---------------------------------------------------------------- determinism

Outcome ac11(bool have2, bool have3) {
  std::string detail;
  bool ok = true;
  auto compare = [&](const std::string& name, const std::string& command,
                     const std::map<std::string, std::string>& kv, bool have_t1) {
    const fs::path cfg = work / (name + ".cfg");
    const fs::path o1 = work / (name + "_t1"), o8 = work / (name + "_t8");
    write_config(cfg, kv);
    if (!have_t1 && run_cli(command, cfg, o1, 1) != 0) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + name + ": threads=1 run failed";
      return;
    }
    if (run_cli(command, cfg, o8, 8) != 0) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + name + ": threads=8 run failed";
      return;
    }
    std::size_t files = 0, same = 0;
    std::string diff;
    for (const auto& e : fs::directory_iterator(o1)) {
      if (e.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = o8 / e.path().filename();
      if (fs::exists(other) && slurp(e.path()) == slurp(other))
        ++same;
      else
        diff += " " + e.path().filename().string();
    }
    if (files == 0 || same != files) ok = false;
    detail += (detail.empty() ? "" : "; ") + name + ": " + std::to_string(same) + "/" +
              std::to_string(files) + " CSVs identical" + (diff.empty() ? "" : ", differ:" + diff);
  };
  compare("ac2", "loglik", ac2_config(), have2);
  compare("ac3", "run", ac3_config(), have3);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only, expect_fail;
  app.add_option("--cli", cli_path, "path to the panelfilter executable")->required();
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--expect-fail", expect_fail,
                 "criteria known to fail; the exit status is 0 when exactly these fail")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  work = fs::absolute(work_dir);
  fs::create_directories(work);

  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int k) { return selected.empty() || selected.count(k) > 0; };
  const double limits[12] = {0, 1, 60, 600, 10, 5, 5, 5, 5, 5, 900, 0};
  const std::map<int, std::function<Outcome()>> cases = {
      {1, ac1}, {2, ac2}, {3, ac3}, {4, ac4}, {5, ac5},   {6, ac6},
      {7, ac7}, {8, ac8}, {9, ac9}, {10, ac10}, {11, [&] { return ac11(want(2), want(3)); }}};

  std::set<int> failed;
  for (const auto& [k, fn] : cases) {
    if (!want(k)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    o = timed(limits[k], seconds_since(t0), o);
    if (!o.pass) failed.insert(k);
    std::cout << "AC-" << k << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  std::set<int> expected;
  for (int k : expect_fail)
    if (want(k)) expected.insert(k);
  if (failed != expected) {
    for (int k : expected)
      if (!failed.count(k)) std::cout << "note: AC-" << k << " was expected to fail but passed\n";
    return 1;
  }
  return 0;
}
