// bdk: run experiments, emit predictive grids, compare runs.
//
// Exit codes: 0 ok, 1 assertion failed, 2 config or input error, 3 divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bdk/checkpoint.hpp"
#include "bdk/compare.hpp"
#include "bdk/eval.hpp"
#include "bdk/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kAssertionFailed = 1;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string out;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  bdk::Config cfg = bdk::Config::load(a.config);
  for (const auto& o : a.overrides) cfg.set_override(o);
  if (a.seed) cfg.set("experiment.seed", std::to_string(*a.seed));
  if (a.trials) cfg.set("experiment.n_trials", std::to_string(*a.trials));
  const fs::path out = a.out.empty() ? fs::path("runs") / fs::path(a.config).stem() : fs::path(a.out);
  const auto result = bdk::run_experiment(cfg, out, a.quiet ? nullptr : &std::cerr);
  for (const auto& r : result.rows)
    if (r.scope == "mean") std::cout << r.metric << " = " << r.value << " +- " << r.stderr_ << '\n';
  std::cout << "wrote " << out.string() << " (" << result.wall_seconds << " s)\n";
  return kOk;
}

struct GridArgs {
  std::string checkpoint;
  std::string out;
  double x_min = -10, x_max = 10, y_min = -10, y_max = 10;
  std::size_t nx = 100, ny = 100;
  std::optional<double> noise_precision;
};

int cmd_emit_grid(const GridArgs& a) {
  const auto ck = bdk::load_any(a.checkpoint);
  bdk::PosteriorEnsemble ens{ck.spec, ck.samples, a.checkpoint};
  std::optional<bdk::NoiseModel> noise;
  if (a.noise_precision) noise = bdk::NoiseModel(*a.noise_precision);
  const bool student = ck.spec.head.kind == bdk::HeadKind::RegressionMeanLogVar;
  if (student && ens.size() != 1) throw bdk::PreconditionError("a mean/log-variance checkpoint must hold one network");
  const auto pred = student ? bdk::Predictor::student(ens.spec, ens.samples.front()) : bdk::Predictor::ensemble(ens, noise);
  const bdk::GridGeometry geom{a.x_min, a.x_max, a.y_min, a.y_max, a.nx, a.ny};
  const auto grid = bdk::predictive_grid(pred, geom);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  bdk::write_file_atomic(out, [&](std::ostream& os) { bdk::write_grid_csv(os, grid); }, false);
  bdk::write_file_atomic(bdk::grid_metadata_path(out), [&](std::ostream& os) { bdk::write_grid_metadata(os, geom); },
                         false);
  std::cout << "wrote " << out.string() << " (" << geom.cells() << " cells)\n";
  return kOk;
}

struct CompareArgs {
  std::vector<std::string> runs;  // name=path
  std::vector<std::string> assertions;
  std::string csv;
};

int cmd_compare(const CompareArgs& a) {
  std::vector<bdk::RunMetrics> runs;
  for (const auto& spec : a.runs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw bdk::ConfigError(spec, "runs are given as name=path");
    runs.push_back(bdk::read_metrics(spec.substr(0, eq), spec.substr(eq + 1)));
  }
  bdk::validate_comparison(runs);
  bdk::write_comparison_table(std::cout, runs);
  if (!a.csv.empty())
    bdk::write_file_atomic(a.csv, [&](std::ostream& os) { bdk::write_comparison_csv(os, runs); }, false);
  int code = kOk;
  for (const auto& expr : a.assertions) {
    const auto r = bdk::evaluate_assertion(expr, runs);
    std::cout << (r.holds ? "PASS " : "FAIL ") << expr << "  (" << r.lhs << ' ' << r.op << ' ' << r.rhs << ")\n";
    if (!r.holds) code = kAssertionFailed;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian dark knowledge experiments"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
  run_cmd->add_option("--config", run.config, "Config file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Master seed (overrides experiment.seed)");
  run_cmd->add_option("--trials", run.trials, "Number of trials (overrides experiment.n_trials)");
  run_cmd->add_option("--out", run.out, "Output directory (default runs/<config stem>)");
  run_cmd->add_option("--set", run.overrides, "Override a key: section.key=value");
  run_cmd->add_flag("--quiet", run.quiet, "No progress log");

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("emit-grid", "Write the predictive grid of a checkpoint");
  grid_cmd->add_option("--checkpoint", grid.checkpoint, "Parameter or ensemble checkpoint")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--out", grid.out, "Output CSV")->required();
  grid_cmd->add_option("--x-min", grid.x_min);
  grid_cmd->add_option("--x-max", grid.x_max);
  grid_cmd->add_option("--y-min", grid.y_min);
  grid_cmd->add_option("--y-max", grid.y_max);
  grid_cmd->add_option("--nx", grid.nx);
  grid_cmd->add_option("--ny", grid.ny);
  grid_cmd->add_option("--noise-precision", grid.noise_precision, "lambda_n for mean-only regression ensembles");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare metrics files and check assertions");
  cmp_cmd->add_option("runs", cmp.runs, "name=path to metrics.csv or run directory")->required();
  cmp_cmd->add_option("--assert", cmp.assertions, "e.g. 'sgd.grid_kl >= 10 * sgld.grid_kl'");
  cmp_cmd->add_option("--csv", cmp.csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kConfigError;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*grid_cmd) return cmd_emit_grid(grid);
    if (*cmp_cmd) return cmd_compare(cmp);
  } catch (const bdk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    if (*run_cmd) std::cerr << run_cmd->help();
    return kConfigError;
  } catch (const bdk::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
