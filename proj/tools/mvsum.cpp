#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "mvsum/cli.hpp"

int main(int argc, char** argv) {
  using namespace mvsum::cli;
  CLI::App app{"Moving-sum Bayesian changepoint detection for m-dependent series"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  bool standard = false;
  std::string out;
  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_flag("--standard", standard, "Pin every segment to m = 0");
    sub->add_option("--out", out, "Output directory");
    return sub;
  };
  auto* simulate = add("simulate", "Simulate a series with known changepoints");
  auto* fit = add("fit", "Run the changepoint sampler on a CSV series");
  auto* evaluate = add("evaluate", "Score estimates against a ground truth");
  auto* mspace = add("mspace-study", "Estimate which orders remain feasible");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Overrides ov;
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) ov.seed = seed;
    ov.standard = standard;
    if (sub->count("--out")) ov.out = out;
    const auto rc = load_config(config, ov);
    if (sub == simulate) cmd_simulate(rc);
    else if (sub == fit) cmd_fit(rc);
    else if (sub == evaluate) cmd_evaluate(rc);
    else if (sub == mspace) cmd_mspace_study(rc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mvsum: %s\n", e.what());
    return exit_code(e);
  }
  return 0;
}
