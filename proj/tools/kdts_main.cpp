#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdts/cli.hpp"
#include "kdts/error.hpp"
#include "kdts/version.hpp"

int main(int argc, char** argv) {
  using namespace kdts;
  cli::set_self_exe(argv[0]);

  CLI::App app{"kdts — knowledge distillation for wearable sensor time series"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  cli::CommonOpts opts;
  std::string role = "teacher";
  std::string grid_file;
  std::vector<std::string> run_dirs;
  std::string test_aug;
  std::string manifest;
  std::string rows_axis, cols_axis;
  std::vector<std::string> checkpoints;
  int warmup = 50;
  std::string device_label = "cpu";

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", opts.config_file, "experiment config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", opts.out_override, "override the output directory");
    cmd->add_option("--seed", opts.seed_override, "override the config's seed list with one seed");
    cmd->add_option("--workers", opts.workers, "max parallel worker processes");
    cmd->add_flag("--resume", opts.resume, "continue an existing sweep");
  };

  auto* prepare = app.add_subcommand("prepare-data", "window, split and cache a dataset");
  add_common(prepare, true);

  auto* train = app.add_subcommand("train", "train one model per configured seed");
  add_common(train, true);
  train->add_option("--role", role, "teacher | scratch | student")->required();

  auto* sweep = app.add_subcommand("sweep", "expand a grid config and train every cell");
  add_common(sweep, false);
  sweep->add_option("--grid", grid_file, "grid config (JSON)")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate run checkpoints on a test view");
  add_common(evaluate, false);
  evaluate->add_option("runs", run_dirs, "run directories")->required();
  evaluate->add_option("--test-aug", test_aug, "test-set transform (none|removal|noise|shift|mix1|mix2)");

  auto* rep = app.add_subcommand("report", "render tables and curves from a grid manifest");
  add_common(rep, false);
  rep->add_option("--manifest", manifest, "grid manifest (grid.json)")->required();
  rep->add_option("--rows", rows_axis, "row axis (e.g. augment.student.kind)");
  rep->add_option("--cols", cols_axis, "column axis (e.g. teacher.width)");

  auto* bench = app.add_subcommand("benchmark", "batch-size-1 inference timing");
  add_common(bench, true);
  bench->add_option("checkpoints", checkpoints, "checkpoint files")->required();
  bench->add_option("--warmup", warmup, "warm-up iterations excluded from timing");
  bench->add_option("--device-label", device_label, "device label recorded in the report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cli::cmd_prepare_data(opts);
    if (train->parsed()) return cli::cmd_train(opts, role);
    if (sweep->parsed()) return cli::cmd_sweep(opts, grid_file);
    if (evaluate->parsed()) return cli::cmd_evaluate(opts, run_dirs, test_aug);
    if (rep->parsed()) return cli::cmd_report(opts, manifest, rows_axis, cols_axis);
    if (bench->parsed()) return cli::cmd_benchmark(opts, checkpoints, warmup, device_label);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return cli::kExitInternal;
  }
  return cli::kExitUser;
}
