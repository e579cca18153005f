#include <iostream>

#include <CLI11.hpp>

#include "orbitclose/catalog.hpp"
#include "orbitclose/cli/runner.hpp"

using namespace orbitclose;

namespace {

void print_assertions(const cli::RunResult& r) {
  for (const auto& a : r.assertions) {
    std::cout << "  " << (a.pass ? "ok   " : "FAIL ") << a.name << " = " << io::fmt12(a.value)
              << " (limit " << io::fmt12(a.limit) << ")\n";
  }
  if (!r.message.empty()) std::cerr << r.name << ": " << r.message << "\n";
  std::cout << r.name << ": " << r.status << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbitclose: closing-lemma experiments on smooth flows"};
  app.require_subcommand(1);

  cli::Overrides ov;
  std::string out = "out";
  std::uint64_t seed = 0;
  double tol = 0.0;
  int r = 0;
  auto add_flags = [&](CLI::App* sub) {
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "random seed (overrides the scenario)");
    sub->add_option("--tol", tol, "primary assertion tolerance (overrides the scenario)");
    sub->add_option("--r", r, "smoothness order (overrides the scenario)");
  };

  std::string scenario;
  auto* run = app.add_subcommand("run", "run one scenario file");
  run->add_option("scenario", scenario, "scenario file")->required();
  add_flags(run);

  std::string dir;
  auto* suite = app.add_subcommand("suite", "run every *.toml scenario in a directory");
  suite->add_option("dir", dir, "scenario directory")->required();
  add_flags(suite);

  auto* cat = app.add_subcommand("catalog", "list built-in systems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kUsage;
  }

  for (auto* sub : {run, suite}) {
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--tol")) ov.tol = tol;
    if (sub->count("--r")) ov.r = r;
  }

  try {
    if (*cat) {
      for (const auto& e : catalog()) {
        std::cout << e.name << "  dim " << e.dimension << "  " << to_string(e.manifold.kind()) << "  " << e.source;
        for (const auto& [k, v] : e.parameters) std::cout << "  " << k << "=" << io::fmt12(v);
        std::cout << "\n    " << e.description << "\n";
      }
      return 0;
    }
    if (*run) {
      const auto res = cli::run_file(scenario, out, ov);
      print_assertions(res);
      return res.exit_code;
    }
    const auto sr = cli::run_suite(dir, out, ov);
    for (const auto& r : sr.runs) print_assertions(r);
    return sr.exit_code;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kNumerical;
  }
}
