// SPDX-License-Identifier: Apache-2.0
#include "hne/cost.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hne/error.hpp"

namespace hne {
namespace {

void require_channels(const char* op, std::size_t c_in, std::size_t c_out) {
  if (c_in == 0 || c_out == 0) {
    throw DomainError(std::string(op) + ": zero channels (" + std::to_string(c_in) + " -> " +
                      std::to_string(c_out) + ")");
  }
}

}  // namespace

std::uint64_t flops_grouped_linear(std::size_t groups, std::size_t c_in, std::size_t c_out,
                                   bool bias) {
  require_channels("flops_grouped_linear", c_in, c_out);
  return groups * (2 * c_in * c_out + (bias ? c_out : 0));
}

std::uint64_t flops_conv2d(std::size_t groups, std::size_t c_in, std::size_t c_out,
                           std::size_t kernel, std::size_t out_h, std::size_t out_w, bool bias) {
  require_channels("flops_conv2d", c_in, c_out);
  const std::uint64_t positions = out_h * out_w;
  return groups * positions * (2 * c_out * c_in * kernel * kernel + (bias ? c_out : 0));
}

std::uint64_t flops_batch_norm(std::size_t elements) { return 2 * elements; }

std::uint64_t flops_relu(std::size_t elements) { return elements; }

std::uint64_t flops_level(const TreeSpec& spec, std::size_t level) {
  const LevelSpec& lv = spec.levels.at(level);
  Shape in = level_input_shape(spec, level);
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < lv.reps; ++r) {
    const std::size_t cin = in[0];
    if (lv.kind == BlockKind::linear) {
      total += flops_grouped_linear(1, cin, lv.width, lv.bias);
      if (lv.batch_norm) total += flops_batch_norm(lv.width);
      total += flops_relu(lv.width);
      in = Shape{lv.width};
      continue;
    }
    const std::size_t k = lv.separable ? 3 : lv.kernel;
    const std::size_t stride = r == 0 ? lv.stride : 1;
    const std::size_t pad = k / 2;
    const std::size_t h = (in[1] + 2 * pad - k) / stride + 1;
    const std::size_t w = (in[2] + 2 * pad - k) / stride + 1;
    if (lv.separable) {
      total += flops_conv2d(cin, 1, 1, 3, h, w, lv.bias);
      if (lv.batch_norm) total += flops_batch_norm(cin * h * w);
      total += flops_relu(cin * h * w);
      total += flops_conv2d(1, cin, lv.width, 1, h, w, lv.bias);
    } else {
      total += flops_conv2d(1, cin, lv.width, k, h, w, lv.bias);
    }
    if (lv.batch_norm) total += flops_batch_norm(lv.width * h * w);
    total += flops_relu(lv.width * h * w);
    in = Shape{lv.width, h, w};
  }
  if (level == spec.depth) {
    if (lv.kind == BlockKind::conv) total += numel(in);  // global average pooling
    total += flops_grouped_linear(1, in[0], spec.classes, true);
  }
  return total;
}

Ratio Ratio::reduced(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw DomainError("ratio with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

std::string to_string(const Ratio& r) {
  return std::to_string(r.num) + "/" + std::to_string(r.den);
}

Ratio complexity_ratio_exact(std::size_t depth) {
  // (B+1) / (2 - 2^-B) = (B+1) 2^B / (2^(B+1) - 1)
  const std::uint64_t n = std::uint64_t{1} << depth;
  return Ratio::reduced((depth + 1) * n, 2 * n - 1);
}

double complexity_ratio(std::size_t depth) {
  return static_cast<double>(depth + 1) / (2.0 - std::ldexp(1.0, -static_cast<int>(depth)));
}

FlopReport flop_report(const TreeSpec& spec, std::optional<std::uint64_t> block_cost) {
  spec.validate();
  FlopReport r;
  r.depth = spec.depth;
  r.topology = spec.topology;
  std::vector<std::uint64_t> level_cost;
  for (std::size_t l = 0; l <= spec.depth; ++l)
    level_cost.push_back(block_cost ? *block_cost : flops_level(spec, l));
  r.uniform = std::all_of(level_cost.begin(), level_cost.end(),
                          [&](std::uint64_t c) { return c == level_cost.front(); });

  for (std::size_t l = 0; l <= spec.depth; ++l) {
    for (std::size_t k = 0; k < spec.sets_at(l); ++k) {
      const NodeId id{static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(k)};
      r.per_node[id] = level_cost[l];
      r.t_hne += level_cost[l];
    }
  }
  for (std::size_t b = 0; b <= spec.depth; ++b) {
    std::uint64_t total = 0;
    for (const NodeId& n : subensemble(spec, b).nodes) total += r.per_node.at(n);
    r.per_budget.push_back(total);
  }
  // Every leaf model on its own pays for its whole path.
  for (std::size_t leaf = 0; leaf < spec.leaves(); ++leaf)
    for (std::size_t l = 0; l <= spec.depth; ++l) r.t_ind += level_cost[l];

  r.measured = Ratio::reduced(r.t_ind, r.t_hne);
  r.analytic = complexity_ratio_exact(spec.depth);
  return r;
}

FlopReport uniform_cost_report(std::size_t depth, std::uint64_t block_cost) {
  TreeSpec spec;
  spec.depth = depth;
  spec.classes = 2;
  spec.input = {1};
  spec.levels.assign(depth + 1, LevelSpec{});
  return flop_report(spec, block_cost);
}

std::optional<std::string> verify_cost_model(const FlopReport& r) {
  for (std::size_t b = 1; b < r.per_budget.size(); ++b) {
    if (r.per_budget[b] <= r.per_budget[b - 1])
      return "per_budget is not strictly increasing at b=" + std::to_string(b);
  }
  std::uint64_t node_sum = 0;
  for (const auto& [id, c] : r.per_node) node_sum += c;
  if (r.per_budget.empty() || r.per_budget.back() != r.t_hne)
    return "per_budget[B] differs from T_HNE";
  if (node_sum != r.t_hne) return "per-node costs do not sum to T_HNE";
  if (r.uniform && r.topology == Topology::hierarchical && r.measured != r.analytic) {
    return "measured ratio " + to_string(r.measured) + " differs from analytic " +
           to_string(r.analytic);
  }
  return std::nullopt;
}

}  // namespace hne
