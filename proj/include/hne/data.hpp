// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hne/tensor.hpp"

namespace hne {

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std;

  bool empty() const { return mean.empty(); }
};

struct Dataset {
  /// [M, ...per-sample extents]
  Tensor<float> samples;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split;
  /// Normalisation applied to the samples (empty if none).
  ChannelStats stats;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
};

/// Copies the listed samples into a batch tensor and label vector.
Tensor<float> gather_samples(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

enum class CifarVariant { cifar10, cifar100 };

/// Parses CIFAR binary records: a label byte (CIFAR-100: coarse then fine
/// label, the fine one is kept) followed by 3x32x32 channel-planar pixels.
/// Pixels are scaled to [0, 1]; no normalisation is applied.
Dataset read_cifar_binary(std::span<const unsigned char> bytes, CifarVariant variant,
                          const std::string& split);

/// Reads and concatenates the given batch files.
Dataset load_cifar_files(const std::vector<std::string>& paths, CifarVariant variant,
                         const std::string& split);

/// Per-channel mean and population standard deviation over samples and
/// spatial positions (rank-1 samples: per feature).
ChannelStats compute_channel_stats(const Dataset& data);
void apply_normalization(Dataset& data, const ChannelStats& stats);

/// Single CIFAR-10 file, scaled and normalised with its own statistics.
Dataset load_cifar10_binary(const std::string& path);

/// Train and test sets normalised with the train statistics.
struct DatasetPair {
  Dataset train;
  Dataset test;
};
DatasetPair load_cifar_pair(const std::vector<std::string>& train_paths,
                            const std::vector<std::string>& test_paths, CifarVariant variant);

/// Isotropic unit-variance Gaussian classes. Class means sit at pairwise
/// distance `separation` (scaled basis vectors when classes <= dims, seeded
/// points on a sphere otherwise) and depend only on `seed`, so splits drawn
/// with the same seed share them. Sample i has label i % classes.
Dataset synth_gaussians(std::size_t classes, std::size_t dims, std::size_t per_class,
                        double separation, std::uint64_t seed, const std::string& split);

struct AugmentPolicy {
  std::size_t pad = 0;
  /// Crop extents; 0 keeps the input extent.
  std::size_t crop_h = 0;
  std::size_t crop_w = 0;
  double flip_prob = 0.0;

  bool identity() const { return pad == 0 && crop_h == 0 && crop_w == 0 && flip_prob == 0.0; }
  bool operator==(const AugmentPolicy&) const = default;
};

/// Per-sample zero-pad, random crop and horizontal flip of [batch, C, H, W].
/// Each sample draws its row offset, column offset and flip in that order.
Tensor<float> augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                      std::mt19937_64& rng);

/// Reads one sample per line of comma-separated numbers; blank lines and
/// lines starting with '#' are skipped.
Tensor<float> read_csv_samples(const std::string& path, const Shape& sample_shape);

}  // namespace hne
