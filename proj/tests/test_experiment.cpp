#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "panelfilter/errors.hpp"
#include "panelfilter/experiment.hpp"

using namespace panelfilter;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return ExperimentConfig::parse(in);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("panelfilter_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse("# comment\npreset = depletion\n  seed=7  \n\nJ = 20\n");
  CHECK(c.str("preset") == "depletion");
  CHECK(c.uint("seed") == 7);
  CHECK(c.uint("J") == 20);
  CHECK_FALSE(c.has("M"));
  CHECK_THROWS_AS(parse("seed 7\n"), ConfigError);
  CHECK_THROWS_AS(parse("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(c.real("preset"), ConfigError);
}

TEST_CASE("validation fills defaults") {
  const auto v = validate_config(parse("preset = gompertz-bench\nseed = 1\n"));
  CHECK(v.uint("J") == 1000);
  CHECK(v.uint("M") == 50);
  CHECK(v.uint("U") == 5);
  CHECK(v.str("model") == "gompertz");
  // Normalized text is stable.
  CHECK(validate_config(v).text() == v.text());
}

TEST_CASE("validation rejects bad input") {
  CHECK_THROWS_AS(validate_config(parse("preset = depletion\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("seed = 1\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = depletion\nseed = 1\nJ = -5\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = depletion\nseed = 1\nJ = 1\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = depletion\nseed = 1\nbogus = 3\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = nope\nseed = 1\n")), ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = gompertz-bench\nseed = 1\nsigma.zeta = 0.1\n")),
                  ConfigError);
  CHECK_THROWS_AS(validate_config(parse("preset = custom\nseed = 1\nmodel = gompertz\ndata = missing.csv\n")),
                  ConfigError);
  try {
    validate_config(parse("preset = depletion\nJ = x\nbogus = 1\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("seed") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("J") != std::string::npos);
  }
}

TEST_CASE("exit codes") {
  const auto dir = scratch("exit");
  std::ofstream(dir / "bad.cfg") << "preset = depletion\n";
  std::ostringstream out, err;
  CHECK(run_command("validate", dir / "bad.cfg", dir / "o", out, err) == kExitConfig);
  CHECK_FALSE(err.str().empty());
  std::ofstream(dir / "ok.cfg") << "preset = depletion\nseed = 3\nJ = 50\n";
  CHECK(run_command("validate", dir / "ok.cfg", dir / "o", out, err) == kExitOk);
  CHECK(run_command("validate", dir / "none.cfg", dir / "o", out, err) == kExitConfig);
  std::ofstream(dir / "cap.cfg") << "preset = gaussian-cloning\nseed = 1\nU = 100\ncloning_modes = full\nM = 2\n";
  CHECK(run_command("run", dir / "cap.cfg", dir / "cap", out, err) == kExitCapability);
}

TEST_CASE("runs are reproducible byte for byte") {
  const auto dir = scratch("rerun");
  std::ofstream(dir / "d.cfg") << "preset = depletion\nseed = 11\nJ = 100\nN = 20\ntrack_unique = true\n";
  std::ostringstream out, err;
  REQUIRE(run_command("run", dir / "d.cfg", dir / "a", out, err) == kExitOk);
  REQUIRE(run_command("run", dir / "d.cfg", dir / "b", out, err) == kExitOk);
  for (const char* f : {"summary.csv", "trace.csv", "diagnostics.csv", "manifest"}) {
    INFO(f);
    REQUIRE(fs::exists(dir / "a" / f));
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  CHECK(slurp(dir / "a" / "summary.csv").rfind(
            "algorithm,param,final_unique_count,mean,sd,exact_mean,exact_sd\n", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("simulate then loglik round trip") {
  const auto dir = scratch("sim");
  std::ofstream(dir / "s.cfg") << "preset = gompertz-bench\nseed = 4\nU = 2\nN = 10\n";
  std::ostringstream out, err;
  REQUIRE(run_command("simulate", dir / "s.cfg", dir / "sim", out, err) == kExitOk);
  REQUIRE(fs::exists(dir / "sim" / "data.csv"));
  std::ofstream(dir / "l.cfg") << "preset = custom\nmodel = gompertz\nseed = 4\nJ = 200\nreps = 2\n"
                                  "data = sim/data.csv\n";
  REQUIRE(run_command("loglik", dir / "l.cfg", dir / "ll", out, err) == kExitOk);
  const auto s = slurp(dir / "ll" / "summary.csv");
  CHECK(s.rfind("unit,loglik,loglik_se,exact_loglik\n1,", 0) == 0);
  CHECK(s.find("\ntotal,") != std::string::npos);
  fs::remove_all(dir);
}
