// SPDX-License-Identifier: Apache-2.0
#include "hne/tree.hpp"

#include <algorithm>

#include "hne/error.hpp"
#include "hne/json_reader.hpp"

namespace hne {

std::size_t TreeSpec::sets_at(std::size_t level) const {
  switch (topology) {
    case Topology::hierarchical:
      return std::size_t{1} << level;
    case Topology::multibranch:
      return level < split_level ? 1 : leaves();
    case Topology::independent:
      return leaves();
  }
  return 0;
}

std::size_t TreeSpec::node_index(std::size_t leaf, std::size_t level) const {
  switch (topology) {
    case Topology::hierarchical:
      return leaf >> (depth - level);
    case Topology::multibranch:
      return level < split_level ? 0 : leaf;
    case Topology::independent:
      return leaf;
  }
  return 0;
}

std::size_t TreeSpec::first_leaf(std::size_t level, std::size_t index) const {
  switch (topology) {
    case Topology::hierarchical:
      return index << (depth - level);
    case Topology::multibranch:
      return level < split_level ? 0 : index;
    case Topology::independent:
      return index;
  }
  return 0;
}

std::size_t TreeSpec::node_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l <= depth; ++l) total += sets_at(l);
  return total;
}

void TreeSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("tree: " + what); };
  if (depth > 16) fail("depth " + std::to_string(depth) + " is unreasonably large");
  if (levels.size() != depth + 1) {
    fail("expected " + std::to_string(depth + 1) + " level specs for depth " +
         std::to_string(depth) + ", got " + std::to_string(levels.size()));
  }
  if (classes == 0) fail("class count must be positive");
  const BlockKind kind = levels.front().kind;
  if (kind == BlockKind::linear && input.size() != 1) {
    fail("linear blocks need a 1-D input shape, got " + to_string(input));
  }
  if (kind == BlockKind::conv && input.size() != 3) {
    fail("conv blocks need a [channels, height, width] input shape, got " +
         to_string(input));
  }
  if (numel(input) == 0) fail("input shape has a zero extent");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelSpec& lv = levels[l];
    const std::string where = "level " + std::to_string(l) + ": ";
    if (lv.kind != kind) fail(where + "all levels must use the same block kind");
    if (lv.reps == 0) fail(where + "reps must be at least 1");
    if (lv.width == 0) fail(where + "width must be positive");
    if (lv.stride == 0) fail(where + "stride must be positive");
    if (lv.kind == BlockKind::linear && lv.stride != 1) fail(where + "linear blocks have no stride");
    if (lv.kind == BlockKind::conv) {
      if (lv.kernel != 1 && lv.kernel != 3) fail(where + "kernel must be 1 or 3");
      if (lv.separable && lv.kernel != 3) fail(where + "separable blocks use a 3x3 depthwise kernel");
    }
  }
  if (topology == Topology::multibranch && (split_level == 0 || split_level > depth)) {
    fail("multibranch split level must be in 1.." + std::to_string(depth) + ", got " +
         std::to_string(split_level));
  }
  // Spatial extents must stay positive through every strided level.
  for (std::size_t l = 0; l <= depth; ++l) {
    const Shape in = level_input_shape(*this, l);
    if (numel(in) == 0) fail("level " + std::to_string(l) + " receives an empty input");
  }
}

std::string to_string(NodeId id) {
  return "(" + std::to_string(id.level) + ", " + std::to_string(id.index) + ")";
}

NodeId parent_of(const TreeSpec& spec, NodeId node) {
  if (node.level == 0) return node;
  const std::size_t leaf = spec.first_leaf(node.level, node.index);
  return NodeId{node.level - 1,
                static_cast<std::uint32_t>(spec.node_index(leaf, node.level - 1))};
}

bool SubEnsembleSpec::contains(NodeId node) const {
  return node.level < groups_per_level.size() && node.index < groups_per_level[node.level];
}

std::vector<NodeId> leaf_order(const TreeSpec& spec) {
  // With children of node k stored at 2k and 2k+1, a depth-first walk that
  // always visits the left child first reaches the leaves in index order.
  std::vector<NodeId> order;
  order.reserve(spec.leaves());
  const auto depth = static_cast<std::uint32_t>(spec.depth);
  if (spec.topology != Topology::hierarchical) {
    for (std::uint32_t leaf = 0; leaf < spec.leaves(); ++leaf) order.push_back(NodeId{depth, leaf});
    return order;
  }
  std::vector<NodeId> stack{NodeId{0, 0}};
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    if (n.level == depth) {
      order.push_back(n);
      continue;
    }
    stack.push_back(NodeId{n.level + 1, 2 * n.index + 1});
    stack.push_back(NodeId{n.level + 1, 2 * n.index});
  }
  return order;
}

SubEnsembleSpec subensemble(const TreeSpec& spec, std::size_t budget) {
  if (budget > spec.depth) {
    throw DomainError("budget " + std::to_string(budget) + " outside 0.." +
                      std::to_string(spec.depth));
  }
  SubEnsembleSpec out;
  out.budget = budget;
  const std::size_t count = std::size_t{1} << budget;
  for (std::size_t n = 0; n < count; ++n) out.leaves.push_back(n);
  for (std::size_t l = 0; l <= spec.depth; ++l) {
    const std::size_t groups = spec.node_index(count - 1, l) + 1;
    out.groups_per_level.push_back(groups);
    for (std::size_t k = 0; k < groups; ++k)
      out.nodes.push_back(NodeId{static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(k)});
  }
  return out;
}

std::size_t hierarchical_node_count(std::size_t depth, std::size_t budget) {
  return (depth - budget) + ((std::size_t{1} << (budget + 1)) - 1);
}

TreeSpec multibranch_variant(const TreeSpec& spec, std::size_t split_level) {
  if (split_level == 0 || split_level > spec.depth) {
    throw DomainError("split level must be in 1.." + std::to_string(spec.depth) +
                      ", got " + std::to_string(split_level));
  }
  TreeSpec out = spec;
  out.topology = Topology::multibranch;
  out.split_level = split_level;
  return out;
}

TreeSpec independent_variant(const TreeSpec& spec) {
  TreeSpec out = spec;
  out.topology = Topology::independent;
  out.split_level = 0;
  return out;
}

namespace {

Shape conv_output(const LevelSpec& lv, const Shape& in) {
  const std::size_t k = lv.separable ? 3 : lv.kernel;
  const std::size_t pad = k / 2;
  auto extent = [&](std::size_t e) -> std::size_t {
    if (e + 2 * pad < k) return 0;
    return (e + 2 * pad - k) / lv.stride + 1;
  };
  return Shape{lv.width, extent(in[1]), extent(in[2])};
}

}  // namespace

Shape level_input_shape(const TreeSpec& spec, std::size_t level) {
  Shape shape = spec.input;
  for (std::size_t l = 0; l < level; ++l) {
    const LevelSpec& lv = spec.levels.at(l);
    shape = lv.kind == BlockKind::linear ? Shape{lv.width} : conv_output(lv, shape);
  }
  return shape;
}

Shape level_output_shape(const TreeSpec& spec, std::size_t level) {
  if (level == spec.depth) return Shape{spec.classes};
  return level_input_shape(spec, level + 1);
}

std::string to_string(BlockKind kind) {
  return kind == BlockKind::linear ? "linear" : "conv";
}

std::string to_string(Topology topology) {
  switch (topology) {
    case Topology::hierarchical:
      return "hierarchical";
    case Topology::multibranch:
      return "multibranch";
    case Topology::independent:
      return "independent";
  }
  return "?";
}

nlohmann::json to_json(const TreeSpec& spec) {
  nlohmann::json levels = nlohmann::json::array();
  for (const LevelSpec& lv : spec.levels) {
    levels.push_back({{"kind", to_string(lv.kind)},
                      {"reps", lv.reps},
                      {"width", lv.width},
                      {"stride", lv.stride},
                      {"kernel", lv.kernel},
                      {"separable", lv.separable},
                      {"batch_norm", lv.batch_norm},
                      {"bias", lv.bias}});
  }
  return {{"depth", spec.depth},         {"classes", spec.classes},
          {"input", spec.input},         {"topology", to_string(spec.topology)},
          {"split_level", spec.split_level}, {"levels", levels}};
}

TreeSpec tree_spec_from_json(const nlohmann::json& j, const std::string& path) {
  JsonObject obj(j, path);
  TreeSpec spec;
  spec.depth = obj.require<std::size_t>("depth");
  spec.classes = obj.require<std::size_t>("classes");
  {
    const auto& in = obj.raw("input");
    if (!in.is_array() || in.empty()) JsonObject::fail(obj.at("input"), "expected a non-empty array");
    for (const auto& e : in) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < 0) JsonObject::fail(obj.at("input"), "expected non-negative integers");
      spec.input.push_back(e.get<std::size_t>());
    }
  }
  const std::string topo = obj.get<std::string>("topology", "hierarchical");
  if (topo == "hierarchical") {
    spec.topology = Topology::hierarchical;
  } else if (topo == "multibranch") {
    spec.topology = Topology::multibranch;
  } else if (topo == "independent") {
    spec.topology = Topology::independent;
  } else {
    JsonObject::fail(obj.at("topology"), "expected hierarchical|multibranch|independent");
  }
  spec.split_level = obj.get<std::size_t>("split_level", 0);

  const auto& levels = obj.raw("levels");
  if (!levels.is_array()) JsonObject::fail(obj.at("levels"), "expected an array");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    JsonObject lv(levels[i], obj.at("levels") + "[" + std::to_string(i) + "]");
    LevelSpec level;
    const std::string kind = lv.get<std::string>("kind", "linear");
    if (kind == "linear") {
      level.kind = BlockKind::linear;
    } else if (kind == "conv") {
      level.kind = BlockKind::conv;
    } else {
      JsonObject::fail(lv.at("kind"), "expected linear|conv");
    }
    level.reps = lv.get<std::size_t>("reps", 1);
    level.width = lv.require<std::size_t>("width");
    level.stride = lv.get<std::size_t>("stride", 1);
    level.kernel = lv.get<std::size_t>("kernel", 3);
    level.separable = lv.get<bool>("separable", false);
    level.batch_norm = lv.get<bool>("batch_norm", false);
    // No bias in front of batch norm unless asked for.
    level.bias = lv.get<bool>("bias", !level.batch_norm);
    lv.finish();
    spec.levels.push_back(level);
  }
  obj.finish();
  spec.validate();
  return spec;
}

}  // namespace hne
