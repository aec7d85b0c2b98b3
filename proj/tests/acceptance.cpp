// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   hne_acceptance [toy-config.json]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "hne/checkpoint.hpp"
#include "hne/commands.hpp"
#include "hne/config.hpp"
#include "hne/cost.hpp"
#include "hne/data.hpp"
#include "hne/error.hpp"
#include "hne/eval.hpp"
#include "hne/losses.hpp"
#include "hne/network.hpp"
#include "hne/train.hpp"
#include "support.hpp"

using namespace hne;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Check = std::function<Outcome()>;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::uint64_t gcd(std::uint64_t a, std::uint64_t b) {
  while (b != 0) a = std::exchange(b, a % b);
  return a;
}

TreeSpec uniform_tree(std::size_t depth) {
  return hne::testing::linear_tree(depth, 4, 4, 3);
}

// 1. Instrumented uniform-cost counts against the closed forms.
Outcome complexity_model() {
  Outcome o;
  for (std::size_t B = 0; B <= 6; ++B) {
    for (std::uint64_t C : {1u, 7u, 10u, 1000u}) {
      const FlopReport r = flop_report(uniform_tree(B), C);
      const std::uint64_t hne = ((std::uint64_t{2} << B) - 1) * C;
      const std::uint64_t ind = (B + 1) * (std::uint64_t{1} << B) * C;
      // (B+1) / (2 - 2^-B) = (B+1) 2^B / (2^(B+1) - 1), reduced by hand.
      const std::uint64_t n = (B + 1) << B, d = (std::uint64_t{2} << B) - 1, g = gcd(n, d);
      if (r.t_hne != hne || r.t_ind != ind || r.measured != Ratio{n / g, d / g} ||
          r.measured != complexity_ratio_exact(B) || verify_cost_model(r)) {
        o.pass = false;
        o.detail += "B=" + std::to_string(B) + " C=" + std::to_string(C) + " mismatch; ";
      }
    }
  }
  const bool spots = complexity_ratio_exact(0) == Ratio{1, 1} && complexity_ratio_exact(4) == Ratio{80, 31};
  o.pass = o.pass && spots;
  o.detail += "B=0..6 exact, R(0)=" + to_string(complexity_ratio_exact(0)) +
              ", R(4)=" + to_string(complexity_ratio_exact(4));
  return o;
}

// 2. Sub-ensemble node counts against a brute-force union of leaf paths.
Outcome node_ladder() {
  Outcome o;
  std::size_t checked = 0;
  for (std::size_t B = 0; B <= 6; ++B) {
    const TreeSpec spec = uniform_tree(B);
    for (std::size_t b = 0; b <= B; ++b) {
      std::set<std::pair<std::size_t, std::size_t>> paths;
      for (std::size_t leaf = 0; leaf < (std::size_t{1} << b); ++leaf) {
        // Walk up from the leaf by halving the index.
        std::size_t k = leaf;
        for (std::size_t l = B + 1; l-- > 0; k /= 2) paths.insert({l, k});
      }
      std::set<std::pair<std::size_t, std::size_t>> listed;
      for (const NodeId& n : subensemble(spec, b).nodes) listed.insert({n.level, n.index});
      const std::size_t formula = (B - b) + ((std::size_t{2} << b) - 1);
      if (paths.size() != formula || listed != paths || hierarchical_node_count(B, b) != formula) {
        o.pass = false;
        o.detail += "B=" + std::to_string(B) + " b=" + std::to_string(b) + " mismatch; ";
      }
      ++checked;
    }
  }
  o.detail += std::to_string(checked) + " (B, b) pairs";
  return o;
}

template <typename T>
ParamStore<T> random_store(const TreeSpec& spec, std::uint64_t seed) {
  auto store = ParamStore<T>::initialize(spec, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  hne::testing::randomize_running_stats(store, rng);
  return store;
}

TreeSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> depth(0, 4), batch_kind(0, 3), small(2, 5);
  const std::size_t B = depth(rng);
  switch (batch_kind(rng)) {
    case 0:
      return hne::testing::linear_tree(B, small(rng), small(rng), small(rng), 1, false);
    case 1:
      return hne::testing::linear_tree(B, small(rng), small(rng), small(rng), 2, true);
    case 2:
      return hne::testing::conv_tree(B, 2, 5, small(rng), small(rng), false, true);
    default:
      return hne::testing::conv_tree(B, 2, 5, small(rng), small(rng), true, true);
  }
}

// 3. Packed, sequential and incremental evaluation agree.
Outcome evaluation_routes() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> batch(1, 8);
  double worst_float = 0.0;
  std::size_t double_mismatch = 0, chain_mismatch = 0;
  for (int c = 0; c < 100; ++c) {
    const std::uint64_t seed = rng();
    const TreeSpec spec = random_spec(rng);
    Shape xs{batch(rng)};
    xs.insert(xs.end(), spec.input.begin(), spec.input.end());
    const Tensor<double> xd = hne::testing::random_tensor<double>(xs, rng);
    const Tensor<float> xf = xd.cast<float>();
    const auto sd = random_store<double>(spec, seed);
    const auto sf = convert_store<float>(sd);
    const std::size_t B = spec.depth;

    auto chain = [&](const auto& store, const auto& x) {
      auto r = forward_packed(store, 0, x);
      for (std::size_t b = 1; b <= B; ++b) r = extend_budget(std::move(r), store, x);
      return r;
    };
    const auto pd = forward_packed(sd, B, xd);
    const auto qd = forward_subensemble_sequential(sd, B, xd);
    const auto cd = chain(sd, xd);
    double_mismatch += !(pd.per_leaf_logits == qd.per_leaf_logits && pd.prefix_outputs == qd.prefix_outputs &&
                         cd.per_leaf_logits == pd.per_leaf_logits);
    chain_mismatch += !(cd.prefix_outputs == pd.prefix_outputs);

    const auto pf = forward_packed(sf, B, xf);
    const auto qf = forward_subensemble_sequential(sf, B, xf);
    const auto cf = chain(sf, xf);
    chain_mismatch += !(cf.per_leaf_logits == pf.per_leaf_logits && cf.prefix_outputs == pf.prefix_outputs);
    worst_float = std::max<double>({worst_float, hne::max_abs_diff(pf.per_leaf_logits, qf.per_leaf_logits),
                                    hne::max_abs_diff(cf.per_leaf_logits, qf.per_leaf_logits)});
    for (std::size_t b = 0; b <= B; ++b)
      worst_float = std::max<double>(worst_float, hne::max_abs_diff(pf.prefix_outputs[b], qf.prefix_outputs[b]));
    // Each leaf also matches its own root-to-leaf evaluation.
    const std::size_t leaves = spec.leaves(), L = spec.classes;
    for (std::size_t n = 0; n < leaves; ++n) {
      const Tensor<float> leaf = forward_leaf(sf, n, xf);
      for (std::size_t m = 0; m < xs[0]; ++m)
        for (std::size_t l = 0; l < L; ++l)
          worst_float = std::max(worst_float, std::abs(static_cast<double>(leaf[m * L + l]) -
                                                       pf.per_leaf_logits[(m * leaves + n) * L + l]));
    }
  }
  o.pass = worst_float <= 1e-5 && double_mismatch == 0 && chain_mismatch == 0;
  o.detail = "100 cases: float max |diff| " + fmt("%.3g", worst_float) + ", double mismatches " +
             std::to_string(double_mismatch) + ", chained-extend mismatches " + std::to_string(chain_mismatch);
  return o;
}

struct GradToy {
  TreeSpec spec = hne::testing::linear_tree(1, 5, 4, 3, 2, true);
  Tensor<double> x;
  std::vector<int> labels;
  ParamStore<double> store;

  explicit GradToy(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    x = hne::testing::random_tensor<double>({4, 5}, rng, -1.5, 1.5);
    labels = hne::testing::random_labels(4, 3, rng);
    store = ParamStore<double>::initialize(spec, seed);
  }

  /// Loss and (optionally) parameter gradients, flattened in layout order.
  double loss(const ParamStore<double>& params, const LossConfig& cfg, const Tensor<double>* frozen,
              std::vector<double>* grads = nullptr, Tensor<double>* teacher = nullptr) const {
    ParamStore<double> scratch = params;  // train-mode BN writes running stats
    Graph<double> g(grads != nullptr);
    ParamBinding<double> binding(g, scratch);
    const std::size_t n = spec.leaves();
    const PackedTrace trace = packed_forward(binding, g.constant(x), spec.depth, BnMode::train);
    if (teacher)
      *teacher = softmax_stable(prefix_mean(g.value(trace.logits), n, n), static_cast<double>(cfg.temperature));
    const LossBundle<double> b = compute_loss(g, trace.logits, n, n, labels, cfg, frozen);
    if (grads) {
      g.backward(b.total);
      grads->clear();
      for (std::size_t l = 0; l <= spec.depth; ++l) {
        const auto& vars = binding.bound(l);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          const Tensor<double> gt = vars[i].valid() ? g.grad_or_zeros(vars[i])
                                                    : Tensor<double>(params.level(l).params[i].value.shape());
          grads->insert(grads->end(), gt.values().begin(), gt.values().end());
        }
      }
    }
    return b.total_value;
  }
};

LossConfig objective(Objective o) {
  LossConfig c;
  c.objective = o;
  c.alpha = 0.5;
  c.temperature = 2.0;
  return c;
}

const Objective kObjectives[] = {Objective::independent, Objective::structured, Objective::codistill,
                                 Objective::hierarchical};

// 4. Parameter gradients of every objective against central differences.
Outcome gradient_check() {
  Outcome o;
  const double eps = 1e-5;
  double worst = 0.0;
  for (Objective obj : kObjectives) {
    for (std::uint64_t seed : {1, 2, 3}) {
      GradToy toy(seed);
      const LossConfig cfg = objective(obj);
      std::vector<double> analytic;
      Tensor<double> teacher;
      toy.loss(toy.store, cfg, nullptr, &analytic, &teacher);
      const bool distill = obj == Objective::codistill || obj == Objective::hierarchical;
      // Stop-gradient: the teacher is a constant of the surrogate objective.
      const Tensor<double>* frozen = distill ? &teacher : nullptr;
      std::vector<double> numeric;
      ParamStore<double> p = toy.store;
      for (auto& lv : p.levels()) {
        for (auto& t : lv.params) {
          for (std::size_t j = 0; j < t.value.size(); ++j) {
            const double keep = t.value[j];
            t.value[j] = keep + eps;
            const double up = toy.loss(p, cfg, frozen);
            t.value[j] = keep - eps;
            const double down = toy.loss(p, cfg, frozen);
            t.value[j] = keep;
            numeric.push_back((up - down) / (2.0 * eps));
          }
        }
      }
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
      }
      const double scale = std::max(std::sqrt(na), std::sqrt(nn));
      const double rel = scale < 1e-8 ? std::sqrt(diff) : std::sqrt(diff) / scale;
      worst = std::max(worst, rel);
      if (!(rel < 1e-4)) {
        o.pass = false;
        o.detail += to_string(obj) + " seed " + std::to_string(seed) + " rel " + fmt("%.3g", rel) + "; ";
      }
    }
  }
  o.detail += "4 objectives x 3 seeds, worst relative error " + fmt("%.3g", worst);
  return o;
}

// 5. Gradients through stop_gradient equal gradients with a frozen teacher.
Outcome stop_gradient_exactness() {
  Outcome o;
  std::size_t compared = 0, differing = 0;
  for (Objective obj : {Objective::codistill, Objective::hierarchical}) {
    for (std::uint64_t seed : {4, 5, 6, 7}) {
      GradToy toy(seed);
      if (seed % 2 == 0) {
        toy.spec = hne::testing::linear_tree(2, 5, 4, 3, 1, true);
        toy.store = ParamStore<double>::initialize(toy.spec, seed);
      }
      const LossConfig cfg = objective(obj);
      std::vector<double> normal, frozen_grads;
      Tensor<double> teacher;
      const double v1 = toy.loss(toy.store, cfg, nullptr, &normal, &teacher);
      const double v2 = toy.loss(toy.store, cfg, &teacher, &frozen_grads);
      compared += normal.size();
      if (v1 != v2 || normal.size() != frozen_grads.size()) {
        ++differing;
        continue;
      }
      for (std::size_t i = 0; i < normal.size(); ++i) differing += normal[i] != frozen_grads[i];
    }
  }
  o.pass = differing == 0;
  o.detail = std::to_string(compared) + " gradient entries compared, " + std::to_string(differing) + " differ";
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ToyRuns {
  ExperimentConfig cfg;
  DatasetPair data;
  /// summaries[objective][seed]
  std::map<std::string, std::vector<EvalSummary>> summaries;
  double seconds_independent = 0.0;
  double seconds_other = 0.0;
};

constexpr int kSeeds = 5;

std::vector<EvalSummary> run_seeds(ToyRuns& runs, const LossConfig& loss) {
  std::vector<EvalSummary> out;
  for (int s = 0; s < kSeeds; ++s) {
    TrainConfig tc = runs.cfg.train;
    tc.loss = loss;
    tc.seed = static_cast<std::uint64_t>(s);
    tc.eval_every = tc.epochs;
    const TrainResult r = train(runs.data.train, runs.data.test, runs.cfg.tree, tc);
    out.push_back(evaluate(r.params, runs.data.test, tc.averaging));
  }
  return out;
}

std::vector<double> medians(const std::vector<EvalSummary>& runs, bool diversity) {
  std::vector<double> out;
  const std::size_t budgets = runs.front().accuracy.size();
  for (std::size_t b = 0; b < budgets; ++b) {
    std::vector<double> v;
    for (const EvalSummary& s : runs) v.push_back(diversity ? s.diversity[b] : s.accuracy[b]);
    out.push_back(median(v));
  }
  return out;
}

std::string percent_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt("%.2f", 100.0 * v[i]);
  return s;
}

// 6. Accuracy of the independently trained ensemble grows with the budget.
Outcome ensemble_monotonicity(ToyRuns& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  runs.summaries["independent"] = run_seeds(runs, objective(Objective::independent));
  runs.seconds_independent = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::vector<double> acc = medians(runs.summaries["independent"], false);
  Outcome o;
  for (std::size_t b = 1; b < acc.size(); ++b) {
    if (acc[b] < acc[b - 1] - 0.005) {
      o.pass = false;
      o.detail += "drop at budget " + std::to_string(b) + "; ";
    }
  }
  const double gain = acc.back() - acc.front();
  if (gain < 0.01) o.pass = false;
  o.detail += "median accuracy (%) by models 1..16: " + percent_list(acc) + ", gain " +
              fmt("%.2f", 100.0 * gain) + " points, " + fmt("%.0f", runs.seconds_independent) + " s";
  if (runs.seconds_independent > 600.0) {
    o.pass = false;
    o.detail += " (over the 10 min budget)";
  }
  return o;
}

// 7. Qualitative ordering of the distillation objectives.
Outcome distillation_ordering(ToyRuns& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  LossConfig codistill = objective(Objective::codistill);
  codistill.alpha = 0.5;
  LossConfig hierarchical = runs.cfg.train.loss;
  if (hierarchical.objective != Objective::hierarchical) hierarchical = objective(Objective::hierarchical);
  runs.summaries["hierarchical"] = run_seeds(runs, hierarchical);
  runs.summaries["codistill"] = run_seeds(runs, codistill);
  runs.summaries["structured"] = run_seeds(runs, objective(Objective::structured));
  runs.seconds_other = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto ind_acc = medians(runs.summaries.at("independent"), false);
  const auto ind_div = medians(runs.summaries.at("independent"), true);
  const auto hd_acc = medians(runs.summaries.at("hierarchical"), false);
  const auto d_div = medians(runs.summaries.at("codistill"), true);
  const auto s_acc = medians(runs.summaries.at("structured"), false);
  const bool a = hd_acc.front() >= ind_acc.front();
  const bool b = d_div.back() < ind_div.back();
  const bool c = s_acc.back() <= ind_acc.back();
  Outcome o;
  o.pass = a && b && c;
  const double total = runs.seconds_independent + runs.seconds_other;
  if (total > 1800.0) o.pass = false;
  o.detail = std::string("(a) ") + (a ? "ok" : "violated") + ": 1-model hierarchical " + fmt("%.2f", 100 * hd_acc.front()) +
             " vs independent " + fmt("%.2f", 100 * ind_acc.front()) + "; (b) " + (b ? "ok" : "violated") +
             ": 16-model logit std codistill " + fmt("%.4f", d_div.back()) + " vs independent " + fmt("%.4f", ind_div.back()) +
             "; (c) " + (c ? "ok" : "violated") + ": 16-model structured " + fmt("%.2f", 100 * s_acc.back()) + " vs independent " +
             fmt("%.2f", 100 * ind_acc.back()) + "; " + fmt("%.0f", total) + " s";
  return o;
}

// 8. Diversity metric on constructed cases.
Outcome diversity_metric() {
  std::mt19937_64 rng(8);
  const Tensor<double> one = hne::testing::random_tensor<double>({6, 1, 4}, rng, -3, 3);
  Tensor<double> same({6, 5, 4});
  Tensor<double> pair({6, 2, 4});
  for (std::size_t m = 0; m < 6; ++m)
    for (std::size_t l = 0; l < 4; ++l) {
      for (std::size_t n = 0; n < 5; ++n) same[(m * 5 + n) * 4 + l] = one[m * 4 + l];
      // Members at v - 1 and v + 1: population std exactly 1.
      const double v = std::round(one[m * 4 + l]);
      pair[(m * 2 + 0) * 4 + l] = v - 1.0;
      pair[(m * 2 + 1) * 4 + l] = v + 1.0;
    }
  const double d0 = diversity_logit_std(same), d1 = diversity_logit_std(pair);
  const double d1f = diversity_logit_std(pair.cast<float>());
  Outcome o;
  o.pass = d0 == 0.0 && d1 == 1.0 && d1f == 1.0;
  o.detail = "identical leaves " + fmt("%.17g", d0) + ", offset pair " + fmt("%.17g", d1) + " (float " +
             fmt("%.17g", d1f) + ")";
  return o;
}

// 9. CIFAR fixture parsing and checkpoint round trip.
Outcome data_and_persistence() {
  Outcome o;
  std::vector<unsigned char> bytes;
  for (unsigned char label : {7, 3}) {
    bytes.push_back(label);
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>((i * 7 + label) % 256));
  }
  const Dataset d = read_cifar_binary(bytes, CifarVariant::cifar10, "train");
  bool cifar = d.size() == 2 && d.labels == std::vector<int>{7, 3} && d.samples.shape() == Shape{2, 3, 32, 32};
  for (std::size_t r = 0; cifar && r < 2; ++r)
    for (std::size_t i = 0; i < 3072; ++i)
      cifar = cifar && d.samples[r * 3072 + i] == static_cast<float>(bytes[r * 3073 + 1 + i]) / 255.0f;
  cifar = cifar && d.samples[0] == 7.0f / 255.0f;

  const TreeSpec spec = hne::testing::linear_tree(2, 6, 8, 3, 2, true);
  const Dataset train_set = synth_gaussians(3, 6, 40, 3.0, 5, "train");
  const Dataset test_set = synth_gaussians(3, 6, 30, 3.0, 5, "test");
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.lr = 0.05;
  const TrainResult r = train(train_set, test_set, spec, tc);
  const fs::path dir = fs::temp_directory_path() / "hne_acceptance_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.hne").string();
  save_checkpoint(path, r.params, &r.optimizer);
  const Checkpoint loaded = load_checkpoint(path);
  const EvalSummary before = evaluate(r.params, test_set), after = evaluate(loaded.params, test_set);
  bool same = before.accuracy == after.accuracy;
  for (std::size_t b = 1; b < before.diversity.size(); ++b) same = same && before.diversity[b] == after.diversity[b];
  same = same && forward_packed(r.params, 2, test_set.samples).per_leaf_logits ==
                     forward_packed(loaded.params, 2, test_set.samples).per_leaf_logits;
  same = same && loaded.optimizer && *loaded.optimizer == r.optimizer;

  std::vector<unsigned char> ck = encode_checkpoint(r.params, &r.optimizer);
  std::size_t detected = 0, flips = 0;
  for (std::size_t at : {std::size_t{2}, std::size_t{40}, ck.size() / 3, ck.size() / 2, ck.size() - 9}) {
    auto bad = ck;
    bad[at] ^= 0x01;
    ++flips;
    try {
      decode_checkpoint(bad);
    } catch (const ChecksumError&) {
      ++detected;
    } catch (const std::exception&) {
    }
  }
  fs::remove_all(dir);
  o.pass = cifar && same && detected == flips;
  o.detail = std::string("CIFAR fixture ") + (cifar ? "bit-exact" : "MISMATCH") + ", reload evaluation " +
             (same ? "identical" : "DIFFERS") + ", checksum caught " + std::to_string(detected) + "/" +
             std::to_string(flips) + " flipped bytes";
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Two cmd_train runs write identical files.
Outcome determinism(const std::string& config) {
  const fs::path root = fs::temp_directory_path() / "hne_acceptance_determinism";
  fs::remove_all(root);
  std::stringstream out, err;
  Outcome o;
  for (const char* run : {"a", "b"}) {
    const int code = cmd_train(TrainArgs{config, (root / run).string(), {}, {}}, out, err);
    if (code != 0) {
      o.pass = false;
      o.detail = "cmd_train exited " + std::to_string(code) + ": " + err.str();
      return o;
    }
  }
  std::size_t files = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const fs::path name = entry.path().filename();
    ++files;
    if (!fs::exists(root / "b" / name) || slurp(entry.path()) != slurp(root / "b" / name)) ++differing;
  }
  const bool has_metrics = fs::exists(root / "a" / "metrics.csv") && fs::exists(root / "a" / "final.hne");
  fs::remove_all(root);
  o.pass = has_metrics && differing == 0;
  o.detail = std::to_string(files) + " files compared (metrics.csv, checkpoints, resolved config), " +
             std::to_string(differing) + " differ";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config = argc > 1 ? argv[1] : HNE_TOY_CONFIG;
  ToyRuns runs;
  try {
    runs.cfg = load_experiment(config);
    runs.data = load_data(runs.cfg.data, runs.cfg.tree);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << config << ": " << e.what() << '\n';
    return 2;
  }

  const std::vector<std::pair<std::string, Check>> criteria = {
      {"complexity model exact", complexity_model},
      {"node-count ladder", node_ladder},
      {"packed = sequential = incremental", evaluation_routes},
      {"gradient check", gradient_check},
      {"stop-gradient exactness", stop_gradient_exactness},
      {"ensemble monotonicity", [&] { return ensemble_monotonicity(runs); }},
      {"distillation ordering", [&] { return distillation_ordering(runs); }},
      {"diversity metric", diversity_metric},
      {"data and persistence", data_and_persistence},
      {"determinism", [&] { return determinism(config); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
