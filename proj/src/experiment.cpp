#include "panelfilter/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "panelfilter/csv.hpp"
#include "panelfilter/errors.hpp"
#include "panelfilter/gaussian_cloning.hpp"
#include "panelfilter/iterated_filter.hpp"
#include "panelfilter/kalman.hpp"
#include "panelfilter/models/gompertz.hpp"
#include "panelfilter/models/measles.hpp"
#include "panelfilter/models/toy.hpp"
#include "panelfilter/particle_filter.hpp"

#ifndef PANELFILTER_VERSION
#define PANELFILTER_VERSION "0.0.0"
#endif

namespace panelfilter {

const char* software_version() { return PANELFILTER_VERSION; }

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

bool parse_uint(const std::string& s, std::uint64_t& v) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  try {
    std::size_t pos = 0;
    v = std::stoull(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_real(const std::string& s, double& v) {
  try {
    std::size_t pos = 0;
    v = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(v);
  } catch (...) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes") return v = true, true;
  if (s == "false" || s == "0" || s == "no") return v = false, true;
  return false;
}

enum class KeyType { uint, real, boolean, string, reals };

struct KeySpec {
  const char* key;
  KeyType type;
  const char* def;  // nullptr: required or preset-dependent
  const char* help;
  double lo = -INFINITY, hi = INFINITY;
  bool open_lo = false, open_hi = false;
  const char* choices = nullptr;  // '|' separated
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = {
      {"preset", KeyType::string, nullptr, "experiment preset", -INFINITY, INFINITY, false, false,
       "depletion|gompertz-bench|gaussian-cloning|measles-sim|custom"},
      {"seed", KeyType::uint, nullptr, "master random seed (required)"},
      {"out", KeyType::string, "out", "output directory"},
      {"model", KeyType::string, nullptr, "model for the custom preset and the loglik command",
       -INFINITY, INFINITY, false, false, "gompertz|toy|measles"},
      {"U", KeyType::uint, nullptr, "number of units", 1},
      {"N", KeyType::uint, nullptr, "observations per unit", 1},
      {"J", KeyType::uint, "1000", "particles", 2},
      {"M", KeyType::uint, "50", "iterations", 1},
      {"n_starts", KeyType::uint, nullptr, "starting points", 1},
      {"algorithm", KeyType::string, nullptr, "iterated filter variant(s)", -INFINITY, INFINITY,
       false, false, "mpif|pif|both"},
      {"eval_J", KeyType::uint, "1000", "particles for likelihood evaluations", 2},
      {"eval_reps", KeyType::uint, "1", "replicate filters per evaluation", 1},
      {"eval_every", KeyType::uint, nullptr, "evaluate every k iterations (0: final only)", 0},
      {"reps", KeyType::uint, "10", "replicate filters for the loglik command", 1},
      {"cooling", KeyType::string, "geometric", "cooling schedule", -INFINITY, INFINITY, false,
       false, "geometric|polynomial"},
      {"cooling_fraction", KeyType::real, "0.5", "geometric: scale left after cooling_horizon",
       0, 1, true, false},
      {"cooling_horizon", KeyType::real, "50", "geometric: iterations to reach cooling_fraction",
       0, INFINITY, true},
      {"cooling_delta", KeyType::real, "0.5", "polynomial: scale^2 = m^-(1+delta)", 0, INFINITY,
       true},
      {"shuffle_units", KeyType::boolean, "false", "random unit order per iteration"},
      {"track_unique", KeyType::boolean, "false", "record unique particle counts"},
      {"r", KeyType::real, "0.1", "Gompertz growth rate", 0, INFINITY, true},
      {"sigma2", KeyType::real, "0.01", "Gompertz process variance", 0, INFINITY, true},
      {"tau2", KeyType::real, "0.01", "Gompertz measurement variance", 0, INFINITY, true},
      {"K", KeyType::real, "1", "Gompertz carrying capacity", 0, INFINITY, true},
      {"X0", KeyType::real, "1", "Gompertz initial population", 0, INFINITY, true},
      {"exact_max", KeyType::boolean, "true", "compute the exact maximum likelihood"},
      {"exact_restarts", KeyType::uint, "20", "Nelder-Mead restarts", 1},
      {"psi_true", KeyType::real, "1", "toy model unit mean used to simulate"},
      {"prior_mean", KeyType::real, "0", "depletion: prior swarm mean"},
      {"prior_sd", KeyType::real, "1", "depletion: prior swarm sd", 0, INFINITY, true},
      {"rho", KeyType::real, "0.3", "cloning: unit correlation", -1, 1, true, true},
      {"prior_precision", KeyType::real, "1", "cloning: initial precision", 0, INFINITY, true},
      {"offset", KeyType::real, "1", "cloning: initial mean offset from the optimum"},
      {"sigma1_sq", KeyType::real, "1", "cloning: perturbation variance at m = 1", 0},
      {"perturb_exponent", KeyType::real, "1.5", "cloning: variance decays as m^-exponent", 1,
       INFINITY, true},
      {"trace_every", KeyType::uint, "1", "cloning: trace thinning", 1},
      {"cloning_modes", KeyType::string, "marginalized,full,perturbed", "cloning: modes to run"},
      {"variant", KeyType::string, "7-shared", "measles parameter layout", -INFINITY, INFINITY,
       false, false, "unit-specific|c-shared|iota-shared|7-shared"},
      {"pops", KeyType::reals, "300000,600000,1200000", "measles: 1950 city populations"},
      {"years", KeyType::uint, "2", "measles: years of weekly data", 1},
      {"t0", KeyType::real, "1950", "measles: start time (years)"},
      {"start_jitter", KeyType::real, nullptr, "estimation-scale jitter of starting points", 0},
      {"data", KeyType::string, "", "panel data CSV (unit,time,<obs>)"},
      {"covariates", KeyType::string, "", "measles covariates CSV (unit,year,births,pop)"},
  };
  return s;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : schema())
    if (key == k.key) return &k;
  return nullptr;
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::uint: return "nonnegative integer";
    case KeyType::real: return "real number";
    case KeyType::boolean: return "boolean (true|false)";
    case KeyType::string: return "string";
    case KeyType::reals: return "comma-separated real numbers";
  }
  return "?";
}

std::string range_text(const KeySpec& k) {
  std::ostringstream o;
  o << (k.open_lo ? "(" : "[") << k.lo << ", " << k.hi << (k.open_hi ? ")" : "]");
  return o.str();
}

bool in_range(const KeySpec& k, double v) {
  if (k.open_lo ? !(v > k.lo) : !(v >= k.lo)) return false;
  if (k.open_hi ? !(v < k.hi) : !(v <= k.hi)) return false;
  return true;
}

std::string preset_default(const std::string& preset, const std::string& key) {
  static const std::map<std::string, std::map<std::string, std::string>> d = {
      {"depletion",
       {{"model", "toy"}, {"U", "2"}, {"N", "100"}, {"n_starts", "1"}, {"algorithm", "both"},
        {"eval_every", "0"}, {"start_jitter", "0"}}},
      {"gompertz-bench",
       {{"model", "gompertz"}, {"U", "5"}, {"N", "50"}, {"n_starts", "10"}, {"algorithm", "both"},
        {"eval_every", "0"}, {"start_jitter", "0"}}},
      {"gaussian-cloning",
       {{"model", "gaussian"}, {"U", "2"}, {"N", "1"}, {"n_starts", "1"}, {"algorithm", "mpif"},
        {"eval_every", "0"}, {"start_jitter", "0"}}},
      {"measles-sim",
       {{"model", "measles"}, {"N", "0"}, {"n_starts", "1"}, {"algorithm", "mpif"},
        {"eval_every", "1"}, {"start_jitter", "0.3"}}},
      {"custom",
       {{"U", "0"}, {"N", "0"}, {"n_starts", "1"}, {"algorithm", "mpif"}, {"eval_every", "0"},
        {"start_jitter", "0"}}},
  };
  auto p = d.find(preset);
  if (p == d.end()) return {};
  auto v = p->second.find(key);
  return v == p->second.end() ? std::string{} : v->second;
}

std::uint64_t fnv1a(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

std::shared_ptr<const ParamLayout> layout_for_names(const ExperimentConfig& c) {
  const std::string model = c.str("model");
  if (model == "gompertz") return gompertz_layout(1);
  if (model == "toy") return toy_layout(1);
  if (model == "measles") return measles_layout(measles_variant_from_string(c.str("variant")), 1);
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig ExperimentConfig::parse(std::istream& in, const std::string& source) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back(source + ":" + std::to_string(lineno) + ": expected `key = value`");
      continue;
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      errors.push_back(source + ":" + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (c.values_.count(key))
      errors.push_back(source + ":" + std::to_string(lineno) + ": duplicate key `" + key + "`");
    c.values_[key] = value;
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  auto c = parse(in, path.string());
  c.base_dir_ = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return c;
}

const std::string& ExperimentConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing configuration key `" + key + "`");
  return it->second;
}

std::uint64_t ExperimentConfig::uint(const std::string& key) const {
  std::uint64_t v;
  if (!parse_uint(raw(key), v)) throw ConfigError(key + ": expected a nonnegative integer");
  return v;
}

double ExperimentConfig::real(const std::string& key) const {
  double v;
  if (!parse_real(raw(key), v)) throw ConfigError(key + ": expected a real number");
  return v;
}

bool ExperimentConfig::flag(const std::string& key) const {
  bool v;
  if (!parse_bool(raw(key), v)) throw ConfigError(key + ": expected true or false");
  return v;
}

std::vector<double> ExperimentConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split(raw(key), ',')) {
    double v;
    if (!parse_real(item, v)) throw ConfigError(key + ": expected comma-separated real numbers");
    out.push_back(v);
  }
  return out;
}

std::vector<std::pair<std::string, double>> ExperimentConfig::prefixed(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [k, v] : values_)
    if (k.rfind(prefix, 0) == 0) {
      double x;
      if (!parse_real(v, x)) throw ConfigError(k + ": expected a real number");
      out.emplace_back(k.substr(prefix.size()), x);
    }
  return out;
}

std::string ExperimentConfig::text() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, text());
  for (const char* key : {"data", "covariates"})
    if (has(key) && !raw(key).empty()) h = fnv1a(h, read_bytes(resolve(raw(key))));
  return h;
}

fs::path ExperimentConfig::resolve(const std::string& path) const {
  fs::path p(path);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

// ---------------------------------------------------------------------------
// Validation

ExperimentConfig validate_config(const ExperimentConfig& raw_cfg) {
  std::vector<std::string> errors;
  ExperimentConfig c = raw_cfg;

  for (const auto& [key, value] : raw_cfg.values()) {
    if (key.rfind("sigma.", 0) == 0 || key.rfind("param.", 0) == 0) {
      double v;
      if (!parse_real(value, v))
        errors.push_back(key + ": expected real number, got '" + value + "'");
      else if (key.rfind("sigma.", 0) == 0 && v < 0)
        errors.push_back(key + ": out of range, expected a value >= 0");
      continue;
    }
    const KeySpec* spec = find_key(key);
    if (!spec) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    bool ok = true;
    double num = 0;
    switch (spec->type) {
      case KeyType::uint: {
        std::uint64_t v = 0;
        ok = parse_uint(value, v);
        num = static_cast<double>(v);
        break;
      }
      case KeyType::real: ok = parse_real(value, num); break;
      case KeyType::boolean: {
        bool b;
        ok = parse_bool(value, b);
        break;
      }
      case KeyType::reals:
        for (const auto& item : split(value, ',')) {
          double v;
          if (!parse_real(item, v) || !(v > 0)) ok = false;
        }
        break;
      case KeyType::string: break;
    }
    if (!ok) {
      errors.push_back(key + ": expected " + type_name(spec->type) + ", got '" + value + "'");
      continue;
    }
    if ((spec->type == KeyType::uint || spec->type == KeyType::real) && !in_range(*spec, num))
      errors.push_back(key + ": out of range, expected a value in " + range_text(*spec) +
                       ", got " + value);
    if (spec->choices) {
      const auto options = split(spec->choices, '|');
      if (std::find(options.begin(), options.end(), value) == options.end())
        errors.push_back(key + ": expected one of " + spec->choices + ", got '" + value + "'");
    }
  }
  if (!raw_cfg.has("seed")) errors.push_back("seed: required key is missing (expected " +
                                             std::string(type_name(KeyType::uint)) + ")");
  if (!raw_cfg.has("preset"))
    errors.push_back("preset: required key is missing (expected one of " +
                     std::string(find_key("preset")->choices) + ")");

  if (errors.empty()) {
    const std::string preset = c.str("preset");
    for (const auto& k : schema()) {
      if (c.has(k.key)) continue;
      if (k.def) {
        c.set(k.key, k.def);
      } else {
        const std::string d = preset_default(preset, k.key);
        if (!d.empty()) c.set(k.key, d);
      }
    }
    if (preset == "custom" || !c.has("model")) {
      if (!c.has("model")) errors.push_back("model: required for preset custom");
      if (c.str("data").empty() && preset == "custom")
        errors.push_back("data: required for preset custom");
    }
    if (preset == "measles-sim" || (c.has("model") && c.str("model") == "measles")) {
      const auto pops = c.reals("pops");
      if (raw_cfg.has("U") && c.uint("U") != pops.size())
        errors.push_back("U: must equal the number of entries in pops (" +
                         std::to_string(pops.size()) + ")");
      c.set("U", std::to_string(pops.size()));
      c.set("N", std::to_string(c.uint("years") * 52));
    }
    if (!c.has("U")) c.set("U", "1");
    if (!c.has("N")) c.set("N", "1");
    for (const char* key : {"data", "covariates"})
      if (!c.str(key).empty() && !fs::exists(c.resolve(c.str(key))))
        errors.push_back(std::string(key) + ": file not found: " + c.resolve(c.str(key)).string());
    if (preset == "gaussian-cloning") {
      for (const auto& m : split(c.str("cloning_modes"), ','))
        if (m != "marginalized" && m != "full" && m != "perturbed")
          errors.push_back("cloning_modes: expected marginalized, full or perturbed, got '" + m +
                           "'");
    }
    if (c.has("model") && preset != "gaussian-cloning") {
      try {
        if (auto layout = layout_for_names(c)) {
          for (const char* prefix : {"sigma.", "param."})
            for (const auto& [name, v] : c.prefixed(prefix)) {
              (void)v;
              if (!layout->find_shared(name) && !layout->find_specific(name))
                errors.push_back(std::string(prefix) + name + ": no parameter named '" + name +
                                 "' in the " + c.str("model") + " model");
            }
        }
      } catch (const Error& e) {
        errors.push_back(e.what());
      }
    }
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

ExperimentConfig validate_config_file(const fs::path& path) {
  return validate_config(ExperimentConfig::load(path));
}

void print_config_schema(std::ostream& out) {
  for (const auto& k : schema()) {
    out << k.key << " (" << type_name(k.type) << ")";
    if (k.def) out << " default '" << k.def << "'";
    if (k.choices) out << " one of " << k.choices;
    out << ": " << k.help << "\n";
  }
  out << "sigma.<param> (real number): perturbation sd on the estimation scale\n";
  out << "param.<param> (real number): natural-scale value for every unit\n";
}

// ---------------------------------------------------------------------------
// Experiment plumbing

namespace {

struct Setup {
  std::optional<PanelModel> model;
  ParamVector truth;
  PanelData data;
  std::vector<CovariateTable> covariates;
};

void apply_param_overrides(ParamVector& p, const ExperimentConfig& c) {
  for (const auto& [name, v] : c.prefixed("param.")) {
    if (p.layout().find_shared(name))
      p.set_shared(name, v);
    else
      p.set_specific_all(name, v);
  }
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw Error("cannot write " + (dir / name).string());
  return f;
}

Setup build_setup(const ExperimentConfig& c) {
  Setup s;
  const std::string model = c.str("model");
  const std::uint64_t seed = c.uint("seed");
  std::optional<PanelData> loaded;
  std::size_t U = c.uint("U"), N = c.uint("N");
  if (!c.str("data").empty()) {
    std::ifstream in(c.resolve(c.str("data")));
    loaded = read_panel_csv(in);
    U = loaded->n_units();
    N = loaded->units.empty() ? 0 : loaded->units[0].n_obs();
    for (const auto& u : loaded->units)
      if (u.n_obs() != N) throw ConfigError("data: units must share the same number of observations");
  }
  if (U < 1 || N < 1) throw ConfigError("U and N must be at least 1");
  if (model == "gompertz") {
    s.model = make_gompertz_panel(U, N, c.real("K"), c.real("X0"));
    s.truth = gompertz_params(s.model->layout_ptr(), c.real("r"), c.real("sigma2"), c.real("tau2"));
  } else if (model == "toy") {
    s.model = make_toy_panel(U, N);
    s.truth = ParamVector(s.model->layout_ptr());
    s.truth.set_specific_all("psi", c.real("psi_true"));
  } else if (model == "measles") {
    if (!c.str("covariates").empty()) {
      std::ifstream in(c.resolve(c.str("covariates")));
      s.covariates = read_covariates_csv(in, "year");
    } else {
      s.covariates = synthetic_measles_covariates(c.reals("pops"));
    }
    if (loaded && loaded->n_units() != s.covariates.size())
      throw ConfigError("covariates: need one table per data unit");
    const std::size_t n_obs = loaded ? N : c.uint("years") * 52;
    s.model = make_measles_panel(measles_variant_from_string(c.str("variant")), s.covariates,
                                 c.real("t0"), n_obs);
    s.truth = measles_default_params(*s.model);
  } else {
    throw ConfigError("model: unsupported model '" + model + "'");
  }
  apply_param_overrides(s.truth, c);
  if (loaded) {
    s.data = std::move(*loaded);
    check_data(*s.model, s.data);
  } else {
    s.data = simulate_panel(*s.model, s.truth, stream_key({seed, stream_tag::simulate}));
  }
  return s;
}

MifConfig mif_config(const ExperimentConfig& c, const ParamLayout& layout, bool marginalize) {
  MifConfig m;
  m.M = c.uint("M");
  m.J = c.uint("J");
  m.marginalize = marginalize;
  if (c.str("cooling") == "polynomial")
    m.cooling = CoolingSchedule::polynomial(c.real("cooling_delta"));
  else
    m.cooling = CoolingSchedule::geometric_fraction(c.real("cooling_fraction"),
                                                    c.real("cooling_horizon"));
  PerturbKernel k = PerturbKernel::defaults(layout);
  for (const auto& [name, v] : c.prefixed("sigma."))
    for (std::size_t i = 0; i < layout.dim(); ++i)
      if (layout.spec(i).name == name) k.sd[i] = v;
  m.kernel = k;
  const std::size_t every = c.uint("eval_every");
  if (every > 0)
    for (std::size_t i = every; i <= m.M; i += every) m.eval_schedule.push_back(i);
  if (every > 0 && (m.eval_schedule.empty() || m.eval_schedule.back() != m.M))
    m.eval_schedule.push_back(m.M);
  if (every == 0 && c.str("model") != "gompertz") m.eval_schedule.push_back(m.M);
  m.eval_J = c.uint("eval_J");
  m.eval_reps = c.uint("eval_reps");
  m.shuffle_units = c.flag("shuffle_units");
  m.track_unique = c.flag("track_unique");
  return m;
}

std::vector<std::pair<std::string, bool>> algorithms(const ExperimentConfig& c) {
  const std::string a = c.str("algorithm");
  if (a == "mpif") return {{"mpif", true}};
  if (a == "pif") return {{"pif", false}};
  return {{"mpif", true}, {"pif", false}};
}

void write_manifest(const ExperimentConfig& c, const fs::path& dir, const std::string& command) {
  auto f = open_out(dir, "manifest");
  f << "software = panelfilter\n";
  f << "version = " << software_version() << "\n";
  f << "command = " << command << "\n";
  f << "preset = " << c.str("preset") << "\n";
  f << "seed = " << c.str("seed") << "\n";
  f << "config_hash = " << hex64(c.hash()) << "\n";
  f << "[config]\n" << c.text();
}

std::vector<ParamVector> jittered_starts(const ParamVector& center, std::size_t count,
                                         double jitter, std::uint64_t seed) {
  std::vector<ParamVector> out;
  const auto est = center.to_estimation_scale();
  StreamRng rng(stream_key({seed, stream_tag::starts}));
  for (std::size_t i = 0; i < count; ++i) {
    ParamVector p = est;
    if (jitter > 0)
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += jitter * (2 * rng.uniform() - 1);
    out.push_back(p.from_estimation_scale());
  }
  return out;
}

struct RunRow {
  std::string algorithm;
  std::size_t start;
  const MultistartRun* run;
};

using IterationScore = std::function<std::optional<double>(const FitResult&, std::size_t)>;

// Shared output for the fitting presets.
void write_fit_runs(const fs::path& dir, const std::vector<RunRow>& rows, double reference,
                    const IterationScore& per_iteration) {
  auto summary = open_out(dir, "summary.csv");
  summary << "algorithm,start,final_loglik,reference_loglik,error\n";
  for (const auto& r : rows) {
    std::string err = r.run->error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    summary << r.algorithm << ',' << r.start + 1 << ',' << csv::format(r.run->loglik) << ','
            << csv::format(reference) << ',' << err << '\n';
  }
  auto trace = open_out(dir, "trace.csv");
  trace << "algorithm,start,iteration,param,mean,sd\n";
  auto diag = open_out(dir, "diagnostics.csv");
  diag << "algorithm,start,iteration,filter_loglik,eval_loglik,eval_se,n_failures,min_ess\n";
  for (const auto& r : rows) {
    if (!r.run->fit) continue;
    const FitResult& fit = *r.run->fit;
    std::ostringstream t;
    write_fit_trace_csv(t, fit);
    std::istringstream lines(t.str());
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line))
      trace << r.algorithm << ',' << r.start + 1 << ',' << line << '\n';
    const std::size_t M = fit.mean.size();
    std::vector<std::size_t> fails(M, 0);
    std::vector<double> min_ess(M, INFINITY);
    for (const auto& s : fit.steps) {
      fails[s.iteration - 1] += s.failed;
      min_ess[s.iteration - 1] = std::min(min_ess[s.iteration - 1], s.ess);
    }
    for (std::size_t m = 1; m <= M; ++m) {
      std::string ev, se;
      if (auto v = per_iteration(fit, m)) {
        ev = csv::format(*v);
        se = "0";
      }
      for (const auto& e : fit.evals)
        if (e.iteration == m) {
          ev = csv::format(e.loglik);
          se = csv::format(e.se);
        }
      diag << r.algorithm << ',' << r.start + 1 << ',' << m << ','
           << csv::format(fit.filter_loglik[m - 1]) << ',' << ev << ',' << se << ','
           << fails[m - 1] << ',' << csv::format(min_ess[m - 1]) << '\n';
    }
  }
}

void run_depletion(const ExperimentConfig& c, const fs::path& dir) {
  const Setup s = build_setup(c);
  const auto& model = *s.model;
  const auto& layout = model.layout();
  const std::uint64_t seed = c.uint("seed");
  const std::size_t J = c.uint("J");
  Swarm prior(J, layout.dim());
  {
    StreamRng rng(stream_key({seed, stream_tag::initial_swarm}));
    std::normal_distribution<double> z(c.real("prior_mean"), c.real("prior_sd"));
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < layout.dim(); ++k) prior.at(j, k) = z(rng);
  }
  auto summary = open_out(dir, "summary.csv");
  summary << "algorithm,param,final_unique_count,mean,sd,exact_mean,exact_sd\n";
  auto trace = open_out(dir, "trace.csv");
  trace << "algorithm,particle,param,value\n";
  auto diag = open_out(dir, "diagnostics.csv");
  diag << "algorithm,iteration,unit,n,param,unique_count\n";

  // Exact posterior after unit 1's data under the Gaussian prior; other units keep the prior.
  const double m0 = c.real("prior_mean"), s0 = c.real("prior_sd");
  const auto& y1 = s.data.units[0].obs;
  const double prec = 1 / (s0 * s0) + static_cast<double>(y1.size());
  const double post_mean = (m0 / (s0 * s0) + std::accumulate(y1.begin(), y1.end(), 0.0)) / prec;

  for (const auto& [name, marginalize] : algorithms(c)) {
    MifConfig cfg = mif_config(c, layout, marginalize);
    cfg.M = 1;
    cfg.eval_schedule.clear();
    cfg.track_unique = true;
    FitResult rec;
    rec.layout = model.layout_ptr();
    rec.unique_tracked = true;
    Swarm sw = prior;
    mif_unit_pass(model, s.data, sw, 0, 1, cfg, stream_key({seed, stream_tag::mif}), &rec);
    for (const auto& u : unique_particle_counts(rec))
      diag << name << ',' << u.iteration << ',' << u.unit + 1 << ',' << u.n << ',' << u.param
           << ',' << u.count << '\n';
    const auto mean = sw.mean(), sd = sw.sd();
    const auto& last = rec.unique.back();
    for (std::size_t f = 0; f < layout.dim(); ++f) {
      const bool updated = layout.unit_of(f) == 0;
      summary << name << ',' << layout.flat_name(f) << ',' << last.count[f] << ','
              << csv::format(mean[f]) << ',' << csv::format(sd[f]) << ','
              << csv::format(updated ? post_mean : m0) << ','
              << csv::format(updated ? 1 / std::sqrt(prec) : s0) << '\n';
    }
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t f = 0; f < layout.dim(); ++f)
        trace << name << ',' << j + 1 << ',' << layout.flat_name(f) << ','
              << csv::format(sw.at(j, f)) << '\n';
  }
}

void run_gompertz_bench(const ExperimentConfig& c, const fs::path& dir) {
  const Setup s = build_setup(c);
  const auto& model = *s.model;
  const std::uint64_t seed = c.uint("seed");
  double exact_max = NAN;
  if (c.flag("exact_max")) {
    ExactMaxOptions opt;
    opt.restarts = c.uint("exact_restarts");
    opt.seed = seed;
    opt.start = s.truth;
    exact_max = maximize_exact(model, s.data, opt).loglik;
  }
  const auto starts = sample_hypercube_starts(s.truth, c.uint("n_starts"), seed);
  auto exact_at = [&](const ParamVector& p) {
    return gompertz_exact_panel_loglik(model, s.data, p);
  };
  std::vector<MultistartResult> results;
  std::vector<std::string> names;
  for (const auto& [name, marginalize] : algorithms(c)) {
    const MifConfig cfg = mif_config(c, model.layout(), marginalize);
    results.push_back(run_multistart(model, s.data, starts, cfg, seed,
                                     [&](const FitResult& f) { return exact_at(f.estimate()); }));
    names.push_back(name);
  }
  std::vector<RunRow> rows;
  for (std::size_t a = 0; a < results.size(); ++a)
    for (std::size_t i = 0; i < results[a].runs.size(); ++i)
      rows.push_back({names[a], i, &results[a].runs[i]});
  write_fit_runs(dir, rows, exact_max, [&](const FitResult& f, std::size_t m) {
    return std::optional<double>(exact_at(f.estimate(m)));
  });
}

void run_cloning(const ExperimentConfig& c, const fs::path& dir) {
  const std::size_t U = c.uint("U");
  const auto lik = GaussianPanelLikelihood::unit_correlation(U, c.real("rho"));
  const Eigen::VectorXd mle = gaussian_mle(lik);
  const Eigen::VectorXd mean0 = mle + Eigen::VectorXd::Constant(U + 1, c.real("offset"));
  const Eigen::VectorXd prec0 = Eigen::VectorXd::Constant(U + 1, c.real("prior_precision"));
  const std::size_t M = c.uint("M");
  const std::size_t every = c.uint("trace_every");
  PerturbSchedule sched;
  sched.sigma1_sq = c.real("sigma1_sq");
  sched.exponent = c.real("perturb_exponent");
  const auto cond = check_convergence_condition(lik);
  const double worst = *std::max_element(cond.ratio.begin(), cond.ratio.end());

  std::vector<CloningTrace> traces;
  for (const auto& mode : split(c.str("cloning_modes"), ',')) {
    const CloningMode cm = mode == "full"        ? CloningMode::full
                           : mode == "perturbed" ? CloningMode::perturbed
                                                 : CloningMode::marginalized;
    traces.push_back(iterate_cloning(mean0, prec0, lik, M, cm, sched));
  }
  auto summary = open_out(dir, "summary.csv");
  summary << "mode,iterations,distance_to_mle,max_variance,max_variance_times_m,condition_ratio\n";
  for (const auto& t : traces) {
    const double dist = (t.mean.back() - mle).norm();
    summary << to_string(t.mode) << ',' << M << ',' << csv::format(dist) << ','
            << csv::format(t.cov_norm.back()) << ','
            << csv::format(t.cov_norm.back() * static_cast<double>(M)) << ','
            << csv::format(worst) << '\n';
  }
  auto trace = open_out(dir, "trace.csv");
  trace << "m,mode,coord,mean,var\n";
  auto ell = open_out(dir, "diagnostics.csv");
  ell << "m,mode,center_phi,center_psi,cov11,cov12,cov22\n";
  for (const auto& t : traces)
    for (std::size_t m = 1; m <= t.mean.size(); ++m) {
      if (m % every != 0 && m != 1 && m != t.mean.size()) continue;
      const auto& mu = t.mean[m - 1];
      for (Eigen::Index k = 0; k < mu.size(); ++k)
        trace << m << ',' << to_string(t.mode) << ',' << k << ',' << csv::format(mu(k)) << ','
              << csv::format(t.variance[m - 1](k)) << '\n';
      const auto& cv = t.cov_phi_psi1[m - 1];
      ell << m << ',' << to_string(t.mode) << ',' << csv::format(mu(0)) << ','
          << csv::format(mu(1)) << ',' << csv::format(cv(0, 0)) << ',' << csv::format(cv(0, 1))
          << ',' << csv::format(cv(1, 1)) << '\n';
    }
}

void run_fitting(const ExperimentConfig& c, const fs::path& dir) {
  const Setup s = build_setup(c);
  const auto& model = *s.model;
  const std::uint64_t seed = c.uint("seed");
  if (c.str("data").empty()) {
    auto f = open_out(dir, "data.csv");
    write_panel_csv(f, s.data);
  }
  if (!s.covariates.empty()) {
    auto f = open_out(dir, "covariates.csv");
    write_covariates_csv(f, s.covariates, "year");
  }
  const auto starts = jittered_starts(s.truth, c.uint("n_starts"), c.real("start_jitter"), seed);
  const double reference =
      panel_loglik(model, s.data, s.truth, c.uint("eval_J"), c.uint("eval_reps"),
                   stream_key({seed, stream_tag::evaluation}))
          .loglik;
  std::vector<MultistartResult> results;
  std::vector<std::string> names;
  for (const auto& [name, marginalize] : algorithms(c)) {
    const MifConfig cfg = mif_config(c, model.layout(), marginalize);
    results.push_back(run_multistart(model, s.data, starts, cfg, seed));
    names.push_back(name);
  }
  std::vector<RunRow> rows;
  for (std::size_t a = 0; a < results.size(); ++a)
    for (std::size_t i = 0; i < results[a].runs.size(); ++i)
      rows.push_back({names[a], i, &results[a].runs[i]});
  write_fit_runs(dir, rows, reference,
                 [](const FitResult&, std::size_t) { return std::optional<double>(); });
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
}

}  // namespace

void run_preset(const ExperimentConfig& c, const fs::path& dir) {
  prepare_dir(dir);
  const std::string preset = c.str("preset");
  if (preset == "depletion")
    run_depletion(c, dir);
  else if (preset == "gompertz-bench")
    run_gompertz_bench(c, dir);
  else if (preset == "gaussian-cloning")
    run_cloning(c, dir);
  else
    run_fitting(c, dir);
  write_manifest(c, dir, "run");
}

void run_simulate(const ExperimentConfig& c, const fs::path& dir) {
  if (c.str("preset") == "gaussian-cloning")
    throw ConfigError("preset: gaussian-cloning has no data to simulate");
  prepare_dir(dir);
  const Setup s = build_setup(c);
  {
    auto f = open_out(dir, "data.csv");
    write_panel_csv(f, s.data);
  }
  if (!s.covariates.empty()) {
    auto f = open_out(dir, "covariates.csv");
    write_covariates_csv(f, s.covariates, "year");
  }
  write_manifest(c, dir, "simulate");
}

void run_loglik(const ExperimentConfig& c, const fs::path& dir) {
  if (c.str("preset") == "gaussian-cloning")
    throw ConfigError("preset: gaussian-cloning has no particle likelihood");
  prepare_dir(dir);
  const Setup s = build_setup(c);
  const auto& model = *s.model;
  const auto pl = panel_loglik(model, s.data, s.truth, c.uint("J"), c.uint("reps"),
                               stream_key({c.uint("seed"), stream_tag::evaluation}));
  std::vector<double> exact;
  if (c.str("model") == "gompertz") exact = gompertz_exact_unit_loglik(model, s.data, s.truth);
  auto f = open_out(dir, "summary.csv");
  f << "unit,loglik,loglik_se,exact_loglik\n";
  double exact_total = 0;
  for (std::size_t u = 0; u < model.n_units(); ++u) {
    f << u + 1 << ',' << csv::format(pl.unit_loglik[u]) << ',' << csv::format(pl.unit_se[u])
      << ',';
    if (!exact.empty()) {
      f << csv::format(exact[u]);
      exact_total += exact[u];
    }
    f << '\n';
  }
  f << "total," << csv::format(pl.loglik) << ',' << csv::format(pl.se) << ',';
  if (!exact.empty()) f << csv::format(exact_total);
  f << '\n';
  write_manifest(c, dir, "loglik");
}

int run_command(const std::string& command, const fs::path& config_path,
                const std::optional<fs::path>& out_override, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig c = validate_config_file(config_path);
    const fs::path dir = out_override ? *out_override : c.resolve(c.str("out"));
    if (command == "validate") {
      out << c.text();
      return kExitOk;
    }
    if (command == "run")
      run_preset(c, dir);
    else if (command == "simulate")
      run_simulate(c, dir);
    else if (command == "loglik")
      run_loglik(c, dir);
    else
      throw ConfigError("unknown command '" + command + "'");
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapabilityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCapability;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace panelfilter
