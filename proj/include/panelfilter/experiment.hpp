#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace panelfilter {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitCapability = 4 };

// Flat `key = value` configuration. Lines starting with '#' are comments.
// After validation every schema key is present in normalized form.
class ExperimentConfig {
 public:
  static ExperimentConfig parse(std::istream& in, const std::string& source = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& raw(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key) const { return raw(key); }
  std::uint64_t uint(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  // Keys sharing a prefix such as `sigma.` or `param.`, with the prefix removed.
  std::vector<std::pair<std::string, double>> prefixed(const std::string& prefix) const;

  // Sorted `key = value` lines.
  std::string text() const;
  // FNV-1a over the normalized text plus the bytes of every referenced file.
  std::uint64_t hash() const;

  const std::filesystem::path& base_dir() const { return base_dir_; }
  std::filesystem::path resolve(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

// Checks types, ranges, presets and referenced files, fills defaults and
// rejects unknown keys. Throws ConfigError listing every problem.
ExperimentConfig validate_config(const ExperimentConfig& raw);
ExperimentConfig validate_config_file(const std::filesystem::path& path);

// Documented schema, one line per key.
void print_config_schema(std::ostream& out);

// Subcommand entry points; write artifacts under out_dir (created if needed).
void run_preset(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
void run_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
void run_loglik(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Loads, validates and dispatches `command` (run | validate | simulate | loglik).
// Maps errors to exit codes and reports them on `err`.
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const std::optional<std::filesystem::path>& out_override, std::ostream& out,
                std::ostream& err);

const char* software_version();

}  // namespace panelfilter
