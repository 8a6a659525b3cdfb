#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coopir/error.hpp"
#include "coopir/harness.hpp"

namespace {

using namespace coopir;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 2;
  if (dynamic_cast<const BudgetError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tool-chain image restoration experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool print_config = false;

  using Runner = std::function<void(const harness::RunDir&, const Json&)>;
  const std::vector<std::tuple<std::string, std::string, Runner>> commands = {
      {"synth", "write a degraded dataset with ground-truth sets", harness::run_synth},
      {"study", "exhaustive plan study over the empirical combos", harness::run_study},
      {"train-planner", "train the planning policy with GRPO", harness::run_train_planner},
      {"cotrain", "train tool parameters through fixed or planned chains", harness::run_cotrain},
      {"eval", "score a policy and tool registry on a combo preset", harness::run_eval},
      {"report", "aggregate run artifacts into report.md / report.json", harness::run_report},
  };

  std::map<CLI::App*, std::pair<std::string, Runner>> by_app;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("-s,--set", overrides, "override a config key, e.g. --set study.images=3")->take_all();
    sub->add_option("-o,--out", out_dir, "run directory")->required();
    sub->add_flag("--print-config", print_config, "print the effective config and exit");
    by_app[sub] = {name, fn};
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const auto& [name, run] = by_app.at(chosen);
  std::optional<harness::RunDir> dir;
  try {
    const Json cfg = harness::effective_config(
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path), overrides);
    if (print_config) {
      std::printf("%s\n", cfg.dump(2).c_str());
      return 0;
    }
    dir = harness::open_run(out_dir, cfg, name);
    run(*dir, cfg);
    harness::close_run(*dir, name, "ok");
    std::printf("%s: wrote %s\n", name.c_str(), out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    const int rc = exit_code_for(e);
    std::fprintf(stderr, "%s: error: %s\n", name.c_str(), e.what());
    if (dir) {
      try {
        harness::close_run(*dir, name, "failed: " + std::string(e.what()));
      } catch (...) {
      }
    }
    return rc;
  }
}
