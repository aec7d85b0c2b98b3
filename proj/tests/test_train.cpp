// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "hne/checkpoint.hpp"
#include "hne/data.hpp"
#include "hne/error.hpp"
#include "hne/eval.hpp"
#include "hne/train.hpp"
#include "support.hpp"

using namespace hne;
using hne::testing::linear_tree;

namespace {

TrainConfig small_config(std::size_t epochs, std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.lr = 0.05;
  cfg.seed = seed;
  return cfg;
}

struct Toy {
  TreeSpec spec = linear_tree(2, 6, 8, 3, 2, true);
  Dataset train = synth_gaussians(3, 6, 40, 3.0, 5, "train");
  Dataset test = synth_gaussians(3, 6, 30, 3.0, 5, "test");
};

void set_le32(std::vector<unsigned char>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint32_t crc32_oracle(const unsigned char* p, std::size_t n) {
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) {
    c ^= p[i];
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
  }
  return ~c;
}

}  // namespace

TEST_CASE("cosine learning rate") {
  CHECK(cosine_lr(0, 10, 0.1) == 0.1);
  CHECK(cosine_lr(5, 10, 0.1) == doctest::Approx(0.05).epsilon(1e-15));
  double prev = 1.0;
  for (std::size_t t = 0; t < 37; ++t) {
    const double lr = cosine_lr(t, 37, 1.0);
    CHECK(lr <= prev);
    CHECK(lr == doctest::Approx(0.5 * (1.0 + std::cos(std::numbers::pi * t / 37.0))));
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(10, 10, 0.1), DomainError);
}

TEST_CASE("SGD update") {
  SUBCASE("x^2 from 1 with momentum matches a scalar simulation") {
    double x = 1.0, v = 0.0;
    std::vector<double> p{1.0}, vel{0.0}, g(1);
    for (int step = 0; step < 5; ++step) {
      const double grad = 2.0 * x;
      v = 0.9 * v + grad;
      x -= 0.1 * v;
      g[0] = 2.0 * p[0];
      sgd_update<double>(p, g, vel, 0.1, 0.9, 0.0);
      CHECK(p[0] == x);
      if (step == 0) CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
      if (step == 1) CHECK(p[0] == doctest::Approx(0.46).epsilon(1e-15));
    }
  }
  SUBCASE("plain gradient descent without momentum or decay") {
    std::vector<float> p{1.0f, -2.0f}, vel(2), g{0.5f, 0.25f};
    sgd_update<float>(p, g, vel, 0.1f, 0.0f, 0.0f);
    CHECK(p[0] == 1.0f - 0.1f * 0.5f);
    CHECK(p[1] == -2.0f - 0.1f * 0.25f);
  }
  SUBCASE("weight decay alone shrinks geometrically") {
    std::vector<double> p{3.0}, vel{0.0}, g{0.0};
    for (int k = 1; k <= 20; ++k) {
      sgd_update<double>(p, g, vel, 0.1, 0.0, 0.01);
      CHECK(p[0] == doctest::Approx(3.0 * std::pow(1.0 - 0.1 * 0.01, k)).epsilon(1e-13));
    }
  }
  SUBCASE("non-finite gradient aborts") {
    std::vector<double> p{1.0}, vel{0.0}, g{std::nan("")};
    CHECK_THROWS_AS(sgd_update<double>(p, g, vel, 0.1, 0.9, 0.0), DivergenceError);
  }
}

TEST_CASE("batch-norm parameters take no weight decay") {
  const TreeSpec spec = linear_tree(1, 4, 5, 3, 1, true);
  ParamStore<float> store = ParamStore<float>::initialize(spec, 9);
  const ParamStore<float> before = store;
  auto state = make_optimizer_state(store);
  std::vector<std::vector<const Tensor<float>*>> grads;
  for (const auto& lv : store.levels()) grads.emplace_back(lv.params.size(), nullptr);
  const std::uint64_t rev = store.revision();
  sgd_step(store, grads, state, 0.1, 0.0, 0.5);
  CHECK(store.revision() != rev);
  CHECK(state.steps == 1);
  for (std::size_t l = 0; l < store.levels().size(); ++l) {
    for (std::size_t i = 0; i < store.level(l).params.size(); ++i) {
      const auto& now = store.level(l).params[i];
      const auto& was = before.level(l).params[i];
      if (now.kind == ParamKind::bn_scale || now.kind == ParamKind::bn_shift) {
        CHECK(now.value == was.value);
      } else {
        for (std::size_t j = 0; j < now.value.size(); ++j) CHECK(now.value[j] == doctest::Approx(0.95 * was.value[j]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("training") {
  Toy toy;
  SUBCASE("zero epochs returns the initial parameters") {
    const TrainResult r = train(toy.train, toy.test, toy.spec, small_config(0));
    CHECK(r.log.rows.empty());
    CHECK(encode_checkpoint(r.params) == encode_checkpoint(ParamStore<float>::initialize(toy.spec, 3)));
  }
  SUBCASE("deterministic for a fixed seed") {
    const TrainResult a = train(toy.train, toy.test, toy.spec, small_config(3));
    const TrainResult b = train(toy.train, toy.test, toy.spec, small_config(3));
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(encode_checkpoint(a.params, &a.optimizer) == encode_checkpoint(b.params, &b.optimizer));
    const TrainResult c = train(toy.train, toy.test, toy.spec, small_config(3, 4));
    CHECK(c.log.to_csv() != a.log.to_csv());

    CHECK(a.log.rows.size() == 3 * 3);
    const std::string csv = a.log.to_csv();
    CHECK(csv.rfind("# schema: hne.metrics/1\n", 0) == 0);
    CHECK(csv.find("epoch,budget,models,accuracy,loss_total,loss_independent,loss_structured,"
                   "loss_distill,loss_hierarchical,diversity,lr\n") != std::string::npos);
    for (const MetricRow& row : a.log.rows) {
      CHECK((row.accuracy >= 0.0 && row.accuracy <= 1.0));
      CHECK(row.models == std::size_t{1} << row.budget);
    }
    CHECK(a.log.last_epoch().size() == 3);
    CHECK(a.optimizer.epochs_done == 3);
  }
  SUBCASE("learning beats chance on separable data") {
    TrainConfig cfg = small_config(8);
    cfg.lr = 0.1;
    const TrainResult r = train(toy.train, toy.test, toy.spec, cfg);
    for (const MetricRow& row : r.log.last_epoch()) CHECK(row.accuracy > 0.6);
  }
  SUBCASE("divergence is reported") {
    TrainConfig cfg = small_config(2);
    cfg.lr = 1e30;
    CHECK_THROWS_AS(train(toy.train, toy.test, toy.spec, cfg), DivergenceError);
  }
  SUBCASE("epoch hook sees every epoch") {
    std::vector<std::size_t> seen;
    TrainHooks hooks;
    hooks.on_epoch_end = [&](std::size_t e, const ParamStore<float>&, const OptimizerState<float>&) {
      seen.push_back(e);
    };
    train(toy.train, toy.test, toy.spec, small_config(2), hooks);
    CHECK(seen == std::vector<std::size_t>{1, 2});
  }
}

TEST_CASE("evaluation") {
  Toy toy;
  SUBCASE("random parameters sit near chance") {
    const TreeSpec spec = linear_tree(2, 6, 8, 10, 1, false);
    const Dataset test = synth_gaussians(10, 6, 100, 2.0, 8, "test");
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const EvalSummary s = evaluate(ParamStore<float>::initialize(spec, seed), test);
      // 1000 samples at p = 0.1: 3 sigma is about 0.029. Untrained nets are
      // biased toward a few classes, so allow a little extra room.
      for (double a : s.accuracy) CHECK(std::abs(a - 0.1) < 0.05);
    }
  }
  SUBCASE("identical leaves agree at every budget") {
    const TreeSpec spec = linear_tree(2, 6, 8, 3, 1, false);
    ParamStore<float> store = ParamStore<float>::initialize(spec, 4);
    for (std::uint32_t l = 1; l <= 2; ++l)
      for (std::uint32_t k = 1; k < spec.sets_at(l); ++k) store.copy_node(NodeId{l, 0}, NodeId{l, k});
    const EvalSummary s = evaluate(store, toy.test);
    CHECK(s.accuracy[1] == s.accuracy[0]);
    CHECK(s.accuracy[2] == s.accuracy[0]);
    CHECK(s.diversity[1] == 0.0);
    CHECK(s.diversity[2] == 0.0);
    CHECK(std::isnan(s.diversity[0]));
  }
  SUBCASE("matches fresh per-leaf evaluation") {
    TrainResult r = train(toy.train, toy.test, toy.spec, small_config(2));
    const EvalSummary s = evaluate(r.params, toy.test, Averaging::logits, 17);
    for (std::size_t b = 0; b <= toy.spec.depth; ++b) {
      const std::size_t n = std::size_t{1} << b;
      Tensor<float> mean({toy.test.size(), 3});
      for (std::size_t leaf = 0; leaf < n; ++leaf) {
        const Tensor<float> z = forward_leaf(r.params, leaf, toy.test.samples);
        for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
      }
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] /= static_cast<float>(n);
      CHECK(s.accuracy[b] == accuracy(mean, toy.test.labels));
    }
  }
}

TEST_CASE("checkpoints") {
  Toy toy;
  const TrainResult r = train(toy.train, toy.test, toy.spec, small_config(2));
  const auto dir = std::filesystem::temp_directory_path() / "hne_test_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.hne").string(), again = (dir / "b.hne").string();

  save_checkpoint(path, r.params, &r.optimizer);
  const Checkpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.optimizer.has_value());
  CHECK(*loaded.optimizer == r.optimizer);
  save_checkpoint(again, loaded.params, &*loaded.optimizer);
  const auto bytes = encode_checkpoint(r.params, &r.optimizer);
  CHECK(encode_checkpoint(loaded.params, &*loaded.optimizer) == bytes);

  const EvalSummary before = evaluate(r.params, toy.test);
  const EvalSummary after = evaluate(loaded.params, toy.test);
  CHECK(before.accuracy == after.accuracy);
  for (std::size_t b = 1; b < before.diversity.size(); ++b) CHECK(before.diversity[b] == after.diversity[b]);
  const Tensor<float> x = gather_samples(toy.test, std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(forward_packed(r.params, 2, x).output() == forward_packed(loaded.params, 2, x).output());

  SUBCASE("layout") {
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HNE1");
    CHECK(bytes[4] == kCheckpointVersion);
    const std::size_t n = bytes.size();
    const std::uint32_t stored = bytes[n - 4] | bytes[n - 3] << 8 | bytes[n - 2] << 16 |
                                 static_cast<std::uint32_t>(bytes[n - 1]) << 24;
    CHECK(stored == crc32_oracle(bytes.data(), n - 4));
  }
  SUBCASE("any flipped byte fails the checksum") {
    for (std::size_t at : {std::size_t{0}, std::size_t{9}, bytes.size() / 2, bytes.size() - 5, bytes.size() - 1}) {
      auto bad = bytes;
      bad[at] ^= 0x10;
      CHECK_THROWS_AS(decode_checkpoint(bad), ChecksumError);
    }
  }
  SUBCASE("unknown version") {
    auto bad = bytes;
    bad[4] = 2;
    set_le32(bad, bad.size() - 4, crc32_oracle(bad.data(), bad.size() - 4));
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("version"), Error);
  }
  SUBCASE("spec mismatch") {
    CHECK_THROWS_AS(load_checkpoint_for(path, linear_tree(2, 6, 9, 3, 2, true)), ConfigError);
    CHECK(load_checkpoint_for(path, toy.spec).params.spec() == toy.spec);
  }
  SUBCASE("truncated file") {
    auto bad = bytes;
    bad.resize(10);
    CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("train config parsing") {
  TrainConfig cfg = small_config(4);
  cfg.augment = AugmentPolicy{4, 32, 32, 0.5};
  CHECK(train_config_from_json(to_json(cfg)) == cfg);
  CHECK_THROWS_AS(train_config_from_json({{"epochz", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", -1.0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ConfigError);
}
