// SPDX-License-Identifier: Apache-2.0
#include "hne/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "hne/cost.hpp"
#include "hne/error.hpp"

namespace hne {

std::vector<SweepVariant> distillation_variants(const LossConfig& base) {
  std::vector<SweepVariant> out;
  LossConfig c = base;
  c.alpha = 0.0;
  c.objective = Objective::independent;
  out.push_back({"independent", c});
  c.objective = Objective::structured;
  c.structured_mix = 0.0;
  out.push_back({"structured", c});
  c = base;
  c.objective = Objective::hierarchical;
  out.push_back({"hierarchical", c});
  for (double alpha : {0.1, 0.5}) {
    c = base;
    c.objective = Objective::codistill;
    c.alpha = alpha;
    out.push_back({"codistill", c});
  }
  return out;
}

std::vector<SweepRun> run_sweep(const DatasetPair& data, const TreeSpec& spec,
                                const TrainConfig& base, const std::vector<SweepVariant>& variants,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  std::vector<SweepRun> runs;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (std::uint64_t s : seeds) runs.push_back({v, s, {}});
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        TrainConfig cfg = base;
        cfg.loss = variants[runs[i].variant].loss;
        cfg.seed = runs[i].seed;
        cfg.eval_every = std::max<std::size_t>(cfg.epochs, 1);
        const TrainResult r = train(data.train, data.test, spec, cfg);
        runs[i].summary = evaluate(r.params, data.test, cfg.averaging);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, runs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return runs;
}

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SweepRow> summarize_sweep(const std::vector<SweepRun>& runs,
                                      const std::vector<SweepVariant>& variants,
                                      const TreeSpec& spec) {
  const FlopReport cost = flop_report(spec);
  std::vector<SweepRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::size_t b = 0; b <= spec.depth; ++b) {
      std::vector<double> acc, div;
      for (const SweepRun& r : runs) {
        if (r.variant != v) continue;
        acc.push_back(r.summary.accuracy.at(b));
        div.push_back(r.summary.diversity.at(b));
      }
      SweepRow row;
      row.variant = variants[v].name;
      row.alpha = variants[v].loss.alpha;
      row.budget = b;
      row.models = std::size_t{1} << b;
      row.flops = cost.per_budget[b];
      row.median_accuracy = median(acc);
      row.median_diversity = median(div);
      row.seeds = acc.size();
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "# schema: hne.compare/1\n"
      << "variant,alpha,budget_b,models,flops,median_accuracy,median_diversity,seeds\n";
  char buf[64];
  for (const SweepRow& r : rows) {
    out << r.variant << ',';
    std::snprintf(buf, sizeof buf, "%g", r.alpha);
    out << buf << ',' << r.budget << ',' << r.models << ',' << r.flops << ',';
    std::snprintf(buf, sizeof buf, "%.6f", r.median_accuracy);
    out << buf << ',';
    if (!std::isnan(r.median_diversity)) {
      std::snprintf(buf, sizeof buf, "%.6f", r.median_diversity);
      out << buf;
    }
    out << ',' << r.seeds << '\n';
  }
  return out.str();
}

}  // namespace hne
