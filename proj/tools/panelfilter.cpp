// Command-line front end: run, validate, simulate and loglik subcommands.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "panelfilter/experiment.hpp"
#include "panelfilter/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Panel iterated filtering experiments"};
  app.set_version_flag("--version", panelfilter::software_version());
  app.require_subcommand(1);

  int threads = 0;
  std::string out_dir;
  bool schema = false;
  app.add_option("--threads", threads, "worker threads (default: PANELFILTER_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory (overrides the config's `out`)");

  std::string config;
  const char* commands[][2] = {{"run", "run the configured preset"},
                               {"validate", "check a config and print it with defaults filled"},
                               {"simulate", "generate data only"},
                               {"loglik", "evaluate the particle log-likelihood only"}};
  for (auto& c : commands) {
    auto* sub = app.add_subcommand(c[0], c[1]);
    sub->add_option("config", config, "config file")->required();
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "output directory");
  }
  auto* sch = app.add_subcommand("schema", "list every config key");
  sch->callback([&] { schema = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : panelfilter::kExitConfig;
  }
  if (schema) {
    panelfilter::print_config_schema(std::cout);
    return 0;
  }
  panelfilter::set_num_threads(threads > 0 ? threads : panelfilter::threads_from_env(1));
  const std::string command = app.get_subcommands().front()->get_name();
  std::optional<std::filesystem::path> out;
  if (!out_dir.empty()) out = out_dir;
  return panelfilter::run_command(command, config, out, std::cout, std::cerr);
}
