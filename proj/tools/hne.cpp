// SPDX-License-Identifier: Apache-2.0
// hne: train, evaluate and query hierarchical ensembles from the command line.
#include <iostream>

#include <CLI11.hpp>

#include "hne/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical neural ensembles: training, anytime inference and cost reports"};
  app.require_subcommand(1);

  hne::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train an ensemble from an experiment config");
  train_cmd->add_option("config", train.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("-o,--output", train.output_dir, "Output directory (overrides output_dir)");
  train_cmd->add_option("--seed", train.seed, "Master seed (overrides train.seed)");
  train_cmd->add_option("--epochs", train.epochs, "Epoch count (overrides train.epochs)");

  hne::EvaluateArgs evaluate;
  auto* eval_cmd = app.add_subcommand("evaluate", "Per-budget test accuracy of a checkpoint");
  eval_cmd->add_option("config", evaluate.config, "Experiment config (JSON)")->required();
  eval_cmd->add_option("checkpoint", evaluate.checkpoint, "Checkpoint file")->required();

  hne::AnytimeArgs anytime;
  auto* any_cmd = app.add_subcommand("anytime", "Predict with the sub-ensemble that fits a budget");
  any_cmd->add_option("checkpoint", anytime.checkpoint, "Checkpoint file")->required();
  any_cmd->add_option("--budget", anytime.budget, "Evaluate 2^b models");
  any_cmd->add_option("--flop-limit", anytime.flop_limit,
                      "Per-sample FLOP limit; picks the largest budget that fits");
  any_cmd->add_option("--input", anytime.input, "CSV file with one sample per line");
  any_cmd->add_option("--config", anytime.config, "Use the test split of this experiment");
  any_cmd->add_option("--limit", anytime.limit, "Only the first N samples");
  any_cmd->add_flag("--extend", anytime.extend, "Also extend to the next budget, reusing blocks");

  hne::FlopsArgs flops;
  auto* flops_cmd = app.add_subcommand("flops", "FLOPs per budget and the complexity ratio");
  flops_cmd->add_option("config", flops.config, "Experiment config (JSON)")->required();
  flops_cmd->add_option("--uniform-cost", flops.uniform_cost, "Give every block this cost");

  hne::CompareArgs compare;
  auto* cmp_cmd = app.add_subcommand("compare-distillation",
                                     "Train every objective over several seeds and report medians");
  cmp_cmd->add_option("config", compare.config, "Experiment config (JSON)")->required();
  cmp_cmd->add_option("--seeds", compare.seeds, "Seeds per objective")->capture_default_str();
  cmp_cmd->add_option("--jobs", compare.jobs, "Runs trained in parallel")->capture_default_str();
  cmp_cmd->add_option("-o,--output", compare.output, "Also write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*train_cmd) return hne::cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return hne::cmd_evaluate(evaluate, std::cout, std::cerr);
  if (*any_cmd) return hne::cmd_anytime(anytime, std::cout, std::cerr);
  if (*flops_cmd) return hne::cmd_flops(flops, std::cout, std::cerr);
  if (*cmp_cmd) return hne::cmd_compare_distillation(compare, std::cout, std::cerr);
  return 2;
}
