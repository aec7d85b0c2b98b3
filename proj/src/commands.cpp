// SPDX-License-Identifier: Apache-2.0
#include "hne/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "hne/checkpoint.hpp"
#include "hne/config.hpp"
#include "hne/cost.hpp"
#include "hne/error.hpp"
#include "hne/eval.hpp"
#include "hne/sweep.hpp"

namespace fs = std::filesystem;

namespace hne {
namespace {

/// Usage problems detected by the commands themselves.
class UsageError : public Error {
 public:
  using Error::Error;
};

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

ExperimentConfig require_config(const std::string& path) {
  if (path.empty()) throw UsageError("no config file given");
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
  return load_experiment(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.hne", epoch);
  return buf;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = require_config(args.config);
    if (args.seed) cfg.train.seed = *args.seed;
    if (args.epochs) cfg.train.epochs = *args.epochs;
    const fs::path dir = resolve_output_dir(cfg, args.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");

    const DatasetPair data = load_data(cfg.data, cfg.tree);
    TrainHooks hooks;
    const std::size_t every = cfg.train.checkpoint_every;
    hooks.on_epoch_end = [&](std::size_t epoch, const ParamStore<float>& p,
                             const OptimizerState<float>& opt) {
      if (every > 0 && epoch % every == 0) save_checkpoint((dir / checkpoint_name(epoch)).string(), p, &opt);
    };
    const TrainResult result = train(data.train, data.test, cfg.tree, cfg.train, hooks);
    write_text(dir / "metrics.csv", result.log.to_csv());
    save_checkpoint((dir / "final.hne").string(), result.params, &result.optimizer);

    out << "trained " << cfg.tree.leaves() << " models for " << cfg.train.epochs
        << " epochs; output in " << dir.string() << '\n';
    for (const MetricRow& r : result.log.last_epoch()) {
      out << "  budget " << r.budget << " (" << r.models << " models): accuracy "
          << fixed(r.accuracy, 4);
      if (!std::isnan(r.diversity)) out << ", logit std " << fixed(r.diversity, 4);
      out << '\n';
    }
    return 0;
  });
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = require_config(args.config);
    if (!fs::is_regular_file(args.checkpoint)) throw UsageError("checkpoint not found: " + args.checkpoint);
    const Checkpoint ck = load_checkpoint_for(args.checkpoint, cfg.tree);
    const DatasetPair data = load_data(cfg.data, cfg.tree);
    const EvalSummary s = evaluate(ck.params, data.test, cfg.train.averaging);
    out << "# schema: hne.evaluate/1\n"
        << "budget_b,models,accuracy,diversity\n";
    for (std::size_t b = 0; b < s.accuracy.size(); ++b) {
      out << b << ',' << (std::size_t{1} << b) << ',' << fixed(s.accuracy[b]) << ','
          << fixed(s.diversity[b]) << '\n';
    }
    return 0;
  });
}

int cmd_anytime(const AnytimeArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.budget && args.flop_limit) throw UsageError("give either --budget or --flop-limit, not both");
    if (!fs::is_regular_file(args.checkpoint)) throw UsageError("checkpoint not found: " + args.checkpoint);
    const Checkpoint ck = load_checkpoint(args.checkpoint);
    const TreeSpec& spec = ck.params.spec();

    Tensor<float> x;
    if (args.input) {
      if (!fs::is_regular_file(*args.input)) throw UsageError("input file not found: " + *args.input);
      x = read_csv_samples(*args.input, spec.input);
    } else if (args.config) {
      const ExperimentConfig cfg = require_config(*args.config);
      if (!(cfg.tree == spec)) throw ConfigError("checkpoint tree does not match " + *args.config);
      x = load_data(cfg.data, cfg.tree).test.samples;
    } else {
      throw UsageError("give --input samples.csv or --config to use the test split");
    }
    if (args.limit && *args.limit < x.dim(0)) {
      Shape shape = x.shape();
      shape[0] = *args.limit;
      x = Tensor<float>(shape, std::vector<float>(x.data(), x.data() + numel(shape)));
    }
    if (x.dim(0) == 0) throw UsageError("no input samples");

    const FlopReport cost = flop_report(spec);
    std::size_t budget = spec.depth;
    if (args.budget) {
      if (*args.budget > spec.depth)
        throw UsageError("budget " + std::to_string(*args.budget) + " outside 0.." + std::to_string(spec.depth));
      budget = *args.budget;
    } else if (args.flop_limit) {
      if (*args.flop_limit < cost.per_budget[0]) {
        throw UsageError("flop limit " + std::to_string(*args.flop_limit) +
                         " is below the minimum feasible " + std::to_string(cost.per_budget[0]) +
                         " FLOPs per sample (one full pass through a single model)");
      }
      budget = 0;
      while (budget + 1 <= spec.depth && cost.per_budget[budget + 1] <= *args.flop_limit) ++budget;
    }
    if (args.extend && budget == spec.depth) {
      throw UsageError("cannot extend beyond the full ensemble (budget " + std::to_string(budget) + ")");
    }

    const EvalResult<float> r = forward_packed(ck.params, budget, x);
    out << "# schema: hne.anytime/1\n"
        << "# budget: " << budget << " (" << (std::size_t{1} << budget) << " models, "
        << cost.per_budget[budget] << " FLOPs per sample)\n";
    std::vector<std::pair<std::size_t, std::vector<int>>> blocks{{budget, predict(r.output())}};
    if (args.extend) {
      const EvalResult<float> ext = extend_budget(r, ck.params, x);
      const EvalResult<float> fresh = forward_packed(ck.params, budget + 1, x);
      const bool same = ext.output() == fresh.output();
      out << "# extend: " << budget << " -> " << budget + 1 << ", "
          << ext.block_evaluations - r.block_evaluations
          << " new blocks, matches fresh forward: " << (same ? "yes" : "no") << '\n';
      blocks.emplace_back(budget + 1, predict(ext.output()));
    }
    out << "sample,budget,prediction\n";
    for (const auto& [b, pred] : blocks)
      for (std::size_t i = 0; i < pred.size(); ++i) out << i << ',' << b << ',' << pred[i] << '\n';
    return 0;
  });
}

int cmd_flops(const FlopsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = require_config(args.config);
    const FlopReport r = flop_report(cfg.tree, args.uniform_cost);
    out << "# schema: hne.flops/1\n"
        << "budget_b,models,flops,cumulative_fraction\n";
    for (std::size_t b = 0; b < r.per_budget.size(); ++b) {
      out << b << ',' << (std::size_t{1} << b) << ',' << r.per_budget[b] << ','
          << fixed(static_cast<double>(r.per_budget[b]) / static_cast<double>(r.t_hne)) << '\n';
    }
    out << "# t_hne," << r.t_hne << '\n'
        << "# t_ind," << r.t_ind << '\n'
        << "# analytic_ratio," << to_string(r.analytic) << ',' << fixed(r.analytic.value()) << '\n'
        << "# measured_ratio," << to_string(r.measured) << ',' << fixed(r.measured.value());
    if (!r.uniform) out << ",model-assumption: non-uniform";
    out << '\n';
    if (const auto problem = verify_cost_model(r)) out << "# inconsistent: " << *problem << '\n';
    return 0;
  });
}

int cmd_compare_distillation(const CompareArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.seeds < 1) throw UsageError("--seeds must be at least 1");
    const ExperimentConfig cfg = require_config(args.config);
    const DatasetPair data = load_data(cfg.data, cfg.tree);
    const std::vector<SweepVariant> variants = distillation_variants(cfg.train.loss);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < args.seeds; ++i) seeds.push_back(cfg.train.seed + i);
    const std::vector<SweepRun> runs = run_sweep(data, cfg.tree, cfg.train, variants, seeds, args.jobs);
    const std::string csv = sweep_csv(summarize_sweep(runs, variants, cfg.tree));
    if (args.output) {
      const fs::path path(*args.output);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_text(path, csv);
    }
    out << csv;
    return 0;
  });
}

}  // namespace hne
