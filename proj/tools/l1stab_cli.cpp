// l1stab_cli run --scenario <path> --out <dir> [--seeds N] [--h-levels k] [--k-const K] [--kappa1 v] [--kappa2 v]
// Exit code 0 iff every assertion of the scenario's suite passes. L1STAB_VERBOSE=1 prints progress.

#include <iostream>

#include "CLI11.hpp"
#include "l1stab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"paired front-tracking runs, averaged-field analysis and weighted L1 audits"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "run one scenario file");
  std::string scenario, out;
  std::optional<int> seeds, levels;
  std::optional<double> K, k1, k2;
  run->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--seeds", seeds, "ensemble size")->check(CLI::PositiveNumber);
  run->add_option("--h-levels", levels, "number of h halvings")->check(CLI::Range(1, 8));
  run->add_option("--k-const", K, "weight jump constant")->check(CLI::NonNegativeNumber);
  run->add_option("--kappa1", k1, "dominance threshold")->check(CLI::PositiveNumber);
  run->add_option("--kappa2", k2, "strong dominance threshold")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    auto sc = l1stab::load_scenario(scenario);
    if (levels) sc.h_levels = *levels;
    if (K) sc.K = *K;
    if (k1) sc.kappa1 = *k1;
    if (k2) sc.kappa2 = *k2;
    if (seeds) sc.seeds = *seeds;
    // the echo records what actually ran
    sc.echo["h_levels"] = sc.h_levels;
    sc.echo["K"] = sc.K;
    sc.echo["kappa1"] = sc.kappa1;
    sc.echo["kappa2"] = sc.kappa2;
    sc.echo["seeds"] = sc.seeds;
    auto rep = l1stab::run_scenario(sc, sc.seeds);
    l1stab::write_report(rep, out);
    int failed = 0;
    for (const auto& a : rep.assertions) {
      failed += !a.pass;
      if (!a.pass || l1stab::verbosity() > 0)
        std::cout << (a.pass ? "ok   " : "FAIL ") << a.name << " = " << a.measured << " (" << a.relation << ' '
                  << a.tolerance << ")\n";
    }
    for (const auto& e : rep.errors) std::cout << "error " << e << '\n';
    std::cout << sc.name << ": " << rep.assertions.size() - static_cast<std::size_t>(failed) << '/'
              << rep.assertions.size() << " assertions pass\n";
    return rep.pass() ? 0 : 1;
  } catch (const l1stab::ValidationError& e) {
    std::cerr << "invalid scenario: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
