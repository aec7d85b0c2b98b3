// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "hne/data.hpp"
#include "hne/error.hpp"

using namespace hne;

namespace {

/// Two CIFAR-10 records: label 7 with ascending bytes, label 2 with descending.
std::vector<unsigned char> two_record_fixture() {
  std::vector<unsigned char> bytes;
  bytes.push_back(7);
  for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(i % 256));
  bytes.push_back(2);
  for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(255 - i % 256));
  return bytes;
}

std::size_t parse_offset(const std::vector<unsigned char>& bytes, CifarVariant v) {
  try {
    read_cifar_binary(bytes, v, "train");
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected a parse error");
  return 0;
}

/// Accuracy of nearest empirical class mean, fitted on `train`.
double nearest_mean_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t d = train.sample_shape()[0], L = train.classes;
  std::vector<double> mean(L * d, 0.0);
  std::vector<double> count(L, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    count[train.labels[i]] += 1.0;
    for (std::size_t j = 0; j < d; ++j) mean[train.labels[i] * d + j] += train.samples[i * d + j];
  }
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t j = 0; j < d; ++j) mean[l * d + j] /= count[l];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = 1e300;
    int arg = 0;
    for (std::size_t l = 0; l < L; ++l) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = test.samples[i * d + j] - mean[l * d + j];
        dist += e * e;
      }
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(l);
      }
    }
    hits += arg == test.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("CIFAR-10 fixture parses bit-exactly") {
  const auto bytes = two_record_fixture();
  const Dataset d = read_cifar_binary(bytes, CifarVariant::cifar10, "train");
  REQUIRE(d.size() == 2);
  CHECK(d.samples.shape() == Shape{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{7, 2});
  CHECK(d.classes == 10);
  for (std::size_t i = 0; i < 3072; ++i) {
    CHECK(d.samples[i] == static_cast<float>(i % 256) / 255.0f);
    CHECK(d.samples[3072 + i] == static_cast<float>(255 - i % 256) / 255.0f);
  }
  CHECK(d.samples[0] == 0.0f);
  // Channel planes are row-major: (c=1, y=0, x=3) is byte 1024 + 3 of the record.
  CHECK(d.samples[1024 + 3] == static_cast<float>((1024 + 3) % 256) / 255.0f);
  const Dataset again = read_cifar_binary(bytes, CifarVariant::cifar10, "train");
  CHECK(again.samples == d.samples);
}

TEST_CASE("CIFAR-10 parse errors carry byte offsets") {
  CHECK(parse_offset(std::vector<unsigned char>(3072, 0), CifarVariant::cifar10) == 3072);
  CHECK(parse_offset({}, CifarVariant::cifar10) == 0);
  auto bytes = two_record_fixture();
  bytes[3073] = 10;
  CHECK(parse_offset(bytes, CifarVariant::cifar10) == 3073);
  bytes.pop_back();
  CHECK(parse_offset(bytes, CifarVariant::cifar10) == bytes.size());
}

TEST_CASE("CIFAR-100 uses the fine label") {
  std::vector<unsigned char> bytes{3, 42};
  bytes.resize(2 + 3072, 128);
  const Dataset d = read_cifar_binary(bytes, CifarVariant::cifar100, "test");
  CHECK(d.labels == std::vector<int>{42});
  CHECK(d.classes == 100);
  CHECK(d.split == "test");
  bytes[1] = 100;
  CHECK(parse_offset(bytes, CifarVariant::cifar100) == 1);
  bytes[1] = 5;
  bytes[0] = 20;
  CHECK(parse_offset(bytes, CifarVariant::cifar100) == 0);
}

TEST_CASE("CIFAR files and normalization") {
  const auto dir = std::filesystem::temp_directory_path() / "hne_test_data";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "fixture.bin").string();
  {
    const auto bytes = two_record_fixture();
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const DatasetPair pair = load_cifar_pair({path}, {path}, CifarVariant::cifar10);
  // Stats come from the train split and are reused unchanged for test.
  CHECK(pair.train.stats.mean == pair.test.stats.mean);
  CHECK(pair.train.samples == pair.test.samples);
  const ChannelStats after = compute_channel_stats(pair.train);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(after.mean[c]) < 1e-5);
    CHECK(after.std[c] == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK_THROWS_AS(load_cifar_files({(dir / "missing.bin").string()}, CifarVariant::cifar10, "train"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CIFAR-10 published channel means" * doctest::skip(std::getenv("HNE_CIFAR10_DIR") == nullptr)) {
  const std::string root = std::getenv("HNE_CIFAR10_DIR");
  std::vector<std::string> files;
  for (int i = 1; i <= 5; ++i) files.push_back(root + "/data_batch_" + std::to_string(i) + ".bin");
  const Dataset d = load_cifar_files(files, CifarVariant::cifar10, "train");
  REQUIRE(d.size() == 50000);
  const ChannelStats s = compute_channel_stats(d);
  CHECK(std::abs(s.mean[0] - 0.4914) < 1e-3);
  CHECK(std::abs(s.mean[1] - 0.4822) < 1e-3);
  CHECK(std::abs(s.mean[2] - 0.4465) < 1e-3);
}

TEST_CASE("Gaussian toy data") {
  const Dataset a = synth_gaussians(4, 6, 50, 3.0, 11, "train");
  const Dataset b = synth_gaussians(4, 6, 50, 3.0, 11, "train");
  CHECK(a.samples == b.samples);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 200);
  for (int l : a.labels) CHECK((l >= 0 && l < 4));
  CHECK_FALSE(synth_gaussians(4, 6, 50, 3.0, 11, "test").samples == a.samples);
  CHECK_FALSE(synth_gaussians(4, 6, 50, 3.0, 12, "train").samples == a.samples);

  SUBCASE("wide separation is nearly perfectly separable") {
    const Dataset train = synth_gaussians(2, 2, 500, 10.0, 3, "train");
    const Dataset test = synth_gaussians(2, 2, 500, 10.0, 3, "test");
    CHECK(nearest_mean_accuracy(train, test) > 0.99);
  }
  SUBCASE("zero separation is chance level") {
    const Dataset train = synth_gaussians(2, 2, 500, 0.0, 3, "train");
    const Dataset test = synth_gaussians(2, 2, 500, 0.0, 3, "test");
    // 1000 test samples: 3 sigma of a fair coin is about 0.047.
    CHECK(std::abs(nearest_mean_accuracy(train, test) - 0.5) < 0.05);
  }
  SUBCASE("more classes than dimensions") {
    const Dataset d = synth_gaussians(10, 3, 20, 2.0, 5, "train");
    CHECK(d.size() == 200);
    CHECK(synth_gaussians(10, 3, 20, 2.0, 5, "train").samples == d.samples);
  }
  CHECK_THROWS_AS(synth_gaussians(1, 2, 5, 1.0, 1, "train"), DomainError);
  CHECK_THROWS_AS(synth_gaussians(2, 0, 5, 1.0, 1, "train"), DomainError);
}

TEST_CASE("augmentation") {
  Tensor<float> batch({3, 2, 4, 5});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<float>(i + 1);
  std::mt19937_64 rng(1);

  CHECK(augment(batch, AugmentPolicy{}, rng) == batch);

  const Tensor<float> flipped = augment(batch, AugmentPolicy{0, 0, 0, 1.0}, rng);
  for (std::size_t r = 0; r < 3 * 2 * 4; ++r)
    for (std::size_t x = 0; x < 5; ++x) CHECK(flipped[r * 5 + x] == batch[r * 5 + (4 - x)]);

  SUBCASE("pad 4 and crop 32 gives offsets 0..8 in both axes") {
    // A single bright pixel at the image origin reveals the offset it lands at.
    Tensor<float> img({1, 1, 32, 32});
    img[0] = 1.0f;
    std::set<std::pair<int, int>> seen;
    std::mt19937_64 stream(7);
    for (int t = 0; t < 4000; ++t) {
      const Tensor<float> out = augment(img, AugmentPolicy{4, 32, 32, 0.0}, stream);
      int pos = -1;
      for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] == 1.0f) pos = static_cast<int>(i);
      // Offset o places the origin at 4 - o, which is off the crop when o > 4.
      const int oy = pos < 0 ? -1 : 4 - pos / 32;
      const int ox = pos < 0 ? -1 : 4 - pos % 32;
      if (pos >= 0) {
        CHECK((oy >= 0 && oy <= 4 && ox >= 0 && ox <= 4));
        seen.insert({oy, ox});
      }
    }
    CHECK(seen.size() == 25);

    // Replay the stream to read offsets directly.
    std::mt19937_64 replay(7);
    std::uniform_int_distribution<std::size_t> off(0, 8);
    std::set<std::size_t> rows, cols;
    for (int t = 0; t < 2000; ++t) {
      rows.insert(off(replay));
      cols.insert(off(replay));
      std::bernoulli_distribution(0.0)(replay);
    }
    CHECK(rows.size() == 9);
    CHECK(cols.size() == 9);
  }
  SUBCASE("deterministic under a fixed stream and label preserving") {
    std::mt19937_64 r1(3), r2(3);
    const AugmentPolicy p{2, 4, 5, 0.5};
    const Tensor<float> x = augment(batch, p, r1);
    CHECK(x == augment(batch, p, r2));
    CHECK(x.dim(0) == batch.dim(0));
  }
  CHECK_THROWS_AS(augment(batch, AugmentPolicy{0, 5, 5, 0.0}, rng), DomainError);
  CHECK_THROWS_AS(augment(Tensor<float>({2, 3}), AugmentPolicy{}, rng), ShapeError);
}

TEST_CASE("CSV sample reader") {
  const auto path = (std::filesystem::temp_directory_path() / "hne_samples.csv").string();
  {
    std::ofstream out(path);
    out << "# two samples\n1,2,3\n4.5,-1,0\n";
  }
  const Tensor<float> t = read_csv_samples(path, {3});
  CHECK(t.shape() == Shape{2, 3});
  CHECK(t[3] == 4.5f);
  CHECK_THROWS_AS(read_csv_samples(path, {4}), ShapeError);
  {
    std::ofstream out(path);
    out << "1,x,3\n";
  }
  CHECK_THROWS_AS(read_csv_samples(path, {3}), Error);
  std::filesystem::remove(path);
}
