// SPDX-License-Identifier: Apache-2.0
#include "hne/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hne/error.hpp"
#include "hne/json_reader.hpp"

namespace hne {
namespace {

std::vector<std::string> string_list(JsonObject& obj, const std::string& key) {
  std::vector<std::string> out;
  if (!obj.has(key)) return out;
  const auto& arr = obj.raw(key);
  if (!arr.is_array()) JsonObject::fail(obj.at(key), "expected an array of paths");
  for (const auto& e : arr) {
    if (!e.is_string()) JsonObject::fail(obj.at(key), "expected an array of paths");
    out.push_back(e.get<std::string>());
  }
  return out;
}

DataConfig data_config_from_json(const nlohmann::json& j, const TreeSpec& tree) {
  JsonObject obj(j, "data");
  DataConfig d;
  d.name = obj.get<std::string>("name", d.name);
  if (d.name == "gaussians") {
    d.classes = obj.get<std::size_t>("classes", tree.classes);
    d.dims = obj.get<std::size_t>("dims", tree.input.size() == 1 ? tree.input[0] : 0);
    d.train_per_class = obj.get<std::size_t>("train_per_class", d.train_per_class);
    d.test_per_class = obj.get<std::size_t>("test_per_class", d.test_per_class);
    d.separation = obj.get<double>("separation", d.separation);
    d.seed = obj.get<std::uint64_t>("seed", d.seed);
    if (d.classes != tree.classes) JsonObject::fail("data.classes", "must equal tree.classes");
    if (tree.input != Shape{d.dims}) JsonObject::fail("data.dims", "must equal tree.input");
    if (d.separation < 0.0) JsonObject::fail("data.separation", "must be non-negative");
  } else if (d.name == "cifar10" || d.name == "cifar100") {
    d.classes = d.name == "cifar10" ? 10 : 100;
    d.path = obj.get<std::string>("path", "");
    d.train_files = string_list(obj, "train_files");
    d.test_files = string_list(obj, "test_files");
    if (d.path.empty() && (d.train_files.empty() || d.test_files.empty())) {
      JsonObject::fail("data", "cifar data needs a path or train_files and test_files");
    }
    if (tree.classes != d.classes) JsonObject::fail("tree.classes", "must be " + std::to_string(d.classes) + " for " + d.name);
    if (tree.input != Shape{3, 32, 32}) JsonObject::fail("tree.input", "must be [3, 32, 32] for " + d.name);
  } else {
    JsonObject::fail("data.name", "expected gaussians|cifar10|cifar100, got \"" + d.name + "\"");
  }
  obj.finish();
  return d;
}

nlohmann::json to_json(const DataConfig& d) {
  if (d.name == "gaussians") {
    return {{"name", d.name},
            {"classes", d.classes},
            {"dims", d.dims},
            {"train_per_class", d.train_per_class},
            {"test_per_class", d.test_per_class},
            {"separation", d.separation},
            {"seed", d.seed}};
  }
  nlohmann::json j = {{"name", d.name}};
  if (!d.path.empty()) j["path"] = d.path;
  if (!d.train_files.empty()) j["train_files"] = d.train_files;
  if (!d.test_files.empty()) j["test_files"] = d.test_files;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // The message carries the line and column.
    throw ConfigError(origin + ": " + e.what());
  }
  try {
    JsonObject obj(j, "");
    ExperimentConfig cfg;
    cfg.tree = tree_spec_from_json(obj.raw("tree"), "tree");
    cfg.data = obj.has("data") ? data_config_from_json(obj.raw("data"), cfg.tree)
                               : data_config_from_json(nlohmann::json::object(), cfg.tree);
    if (obj.has("train")) cfg.train = train_config_from_json(obj.raw("train"), "train");
    if (obj.has("loss")) cfg.train.loss = loss_config_from_json(obj.raw("loss"), "loss");
    if (obj.has("eval")) {
      JsonObject ev = obj.child("eval");
      const std::string avg = ev.get<std::string>("average", "logits");
      if (avg != "logits" && avg != "probs") JsonObject::fail("eval.average", "expected logits|probs");
      cfg.train.averaging = averaging_from_string(avg);
      ev.finish();
    }
    cfg.output_dir = obj.get<std::string>("output_dir", "runs/experiment");
    obj.finish();
    cfg.train.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str(), path);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {{"tree", to_json(cfg.tree)},
          {"data", to_json(cfg.data)},
          {"train", to_json(cfg.train)},
          {"loss", to_json(cfg.train.loss)},
          {"eval", {{"average", to_string(cfg.train.averaging)}}},
          {"output_dir", cfg.output_dir}};
}

DatasetPair load_data(const DataConfig& cfg, const TreeSpec& tree) {
  if (cfg.name == "gaussians") {
    return {synth_gaussians(cfg.classes, cfg.dims, cfg.train_per_class, cfg.separation, cfg.seed,
                            "train"),
            synth_gaussians(cfg.classes, cfg.dims, cfg.test_per_class, cfg.separation, cfg.seed,
                            "test")};
  }
  const CifarVariant variant = cfg.name == "cifar10" ? CifarVariant::cifar10 : CifarVariant::cifar100;
  std::vector<std::string> train = cfg.train_files, test = cfg.test_files;
  const std::filesystem::path root(cfg.path);
  if (train.empty()) {
    if (variant == CifarVariant::cifar10) {
      for (int i = 1; i <= 5; ++i) train.push_back((root / ("data_batch_" + std::to_string(i) + ".bin")).string());
    } else {
      train.push_back((root / "train.bin").string());
    }
  }
  if (test.empty())
    test.push_back((root / (variant == CifarVariant::cifar10 ? "test_batch.bin" : "test.bin")).string());
  DatasetPair pair = load_cifar_pair(train, test, variant);
  if (pair.train.sample_shape() != tree.input) throw ConfigError("data does not match tree.input");
  return pair;
}

std::string resolve_output_dir(const ExperimentConfig& cfg,
                               const std::optional<std::string>& override_dir) {
  std::filesystem::path dir(override_dir ? *override_dir : cfg.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
      dir = std::filesystem::path(root) / dir;
  }
  return dir.string();
}

}  // namespace hne
