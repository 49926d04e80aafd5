// Command-line front end: resolve a config, run it, write CSV outputs.

#include "bcisim/bcisim.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int thread_cap() {
  const char* env = std::getenv("BCI_SIM_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop BCI decoder training simulator"};
  std::string config_path, preset, out_dir = "out", algo;
  std::optional<int> repeats;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool trace = false;
  app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "named preset")
      ->check(CLI::IsMember({"cursor_fig2", "cursor_mismatch_fig7", "arm_fig4", "arm_correlation_fig5",
                             "regret_rates_table1"}));
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--trace", trace, "write per-step traces");
  app.add_option("--repeats", repeats, "number of repeats")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "base seed");
  app.add_option("--algo", algo, "update rule")->check(CLI::IsMember({"ogd", "ma", "ftl", "rls"}));
  app.add_option("--set", sets, "key=value override (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  bcisim::RunConfig rc;
  try {
    bcisim::ConfigBuilder builder;
    if (!preset.empty()) builder.set("preset", preset);
    if (!config_path.empty()) builder.read_file(config_path);
    if (preset.empty() && config_path.empty()) throw bcisim::ConfigError("either --config or --preset is required", 0);
    if (repeats) builder.set("n_repeats", std::to_string(*repeats));
    if (seed) builder.set("base_seed", std::to_string(*seed));
    if (!algo.empty()) builder.set("algo", algo);
    for (const auto& kv : sets) builder.set_override(kv);
    rc = builder.build();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  rc.experiment.threads = thread_cap();

  try {
    const auto summary = bcisim::run_and_export(rc, out_dir, trace);
    if (!summary.all_completed) {
      std::cerr << summary.failed_repeats << " repeat(s) failed; see failures.csv\n";
      return kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
