// SPDX-License-Identifier: Apache-2.0
#include "hne/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hne/error.hpp"

namespace hne {
namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t split_salt(const std::string& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : split) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Shape Dataset::sample_shape() const {
  if (samples.rank() == 0) return {};
  return Shape(samples.shape().begin() + 1, samples.shape().end());
}

Tensor<float> gather_samples(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape = data.samples.shape();
  const std::size_t row = numel(data.sample_shape());
  shape[0] = indices.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw DomainError("sample index out of range");
    std::copy_n(data.samples.data() + indices[i] * row, row, out.data() + i * row);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels.at(i));
  return out;
}

Dataset read_cifar_binary(std::span<const unsigned char> bytes, CifarVariant variant,
                          const std::string& split) {
  const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.empty()) throw ParseError("CIFAR file is empty", 0);
  if (bytes.size() % record != 0) {
    throw ParseError("CIFAR file is truncated: " + std::to_string(bytes.size()) +
                         " bytes is not a whole number of " + std::to_string(record) +
                         "-byte records",
                     bytes.size());
  }
  const std::size_t count = bytes.size() / record;
  Dataset d;
  d.split = split;
  d.classes = variant == CifarVariant::cifar10 ? 10 : 100;
  d.samples = Tensor<float>({count, 3, kCifarSide, kCifarSide});
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = i * record;
    if (variant == CifarVariant::cifar100 && bytes[at] >= 20) {
      throw ParseError("coarse label " + std::to_string(bytes[at]) + " outside 0..19", at);
    }
    const std::size_t label_at = at + label_bytes - 1;
    const unsigned label = bytes[label_at];
    if (label >= d.classes) {
      throw ParseError("label " + std::to_string(label) + " outside 0.." +
                           std::to_string(d.classes - 1),
                       label_at);
    }
    d.labels[i] = static_cast<int>(label);
    float* dst = d.samples.data() + i * kCifarPixels;
    const unsigned char* src = bytes.data() + at + label_bytes;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(src[p]) / 255.0f;
  }
  return d;
}

Dataset load_cifar_files(const std::vector<std::string>& paths, CifarVariant variant,
                         const std::string& split) {
  if (paths.empty()) throw Error("no CIFAR files given");
  std::vector<unsigned char> all;
  for (const std::string& p : paths) {
    const std::vector<unsigned char> bytes = read_file(p);
    try {
      read_cifar_binary(bytes, variant, split);  // validate per file for offsets
    } catch (const ParseError& e) {
      throw ParseError(p + ": " + e.what(), e.offset());
    }
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return read_cifar_binary(all, variant, split);
}

ChannelStats compute_channel_stats(const Dataset& data) {
  const Shape shape = data.sample_shape();
  if (shape.empty() || data.size() == 0) throw Error("cannot compute statistics of an empty dataset");
  const std::size_t channels = shape[0];
  const std::size_t inner = numel(shape) / channels;
  ChannelStats stats;
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t m = 0; m < data.size(); ++m) {
      const float* p = data.samples.data() + (m * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        sum += p[i];
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double n = static_cast<double>(data.size() * inner);
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    stats.mean.push_back(static_cast<float>(mean));
    stats.std.push_back(static_cast<float>(std::sqrt(var)));
  }
  return stats;
}

void apply_normalization(Dataset& data, const ChannelStats& stats) {
  const Shape shape = data.sample_shape();
  const std::size_t channels = shape.at(0);
  if (stats.mean.size() != channels || stats.std.size() != channels) {
    throw ShapeError("normalisation statistics have " + std::to_string(stats.mean.size()) +
                     " channels, data has " + std::to_string(channels));
  }
  const std::size_t inner = numel(shape) / channels;
  for (std::size_t m = 0; m < data.size(); ++m) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float mean = stats.mean[c];
      const float inv = stats.std[c] > 0.0f ? 1.0f / stats.std[c] : 1.0f;
      float* p = data.samples.data() + (m * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] = (p[i] - mean) * inv;
    }
  }
  data.stats = stats;
}

Dataset load_cifar10_binary(const std::string& path) {
  Dataset d = load_cifar_files({path}, CifarVariant::cifar10, "train");
  apply_normalization(d, compute_channel_stats(d));
  return d;
}

DatasetPair load_cifar_pair(const std::vector<std::string>& train_paths,
                            const std::vector<std::string>& test_paths, CifarVariant variant) {
  DatasetPair out{load_cifar_files(train_paths, variant, "train"),
                  load_cifar_files(test_paths, variant, "test")};
  const ChannelStats stats = compute_channel_stats(out.train);
  apply_normalization(out.train, stats);
  apply_normalization(out.test, stats);
  return out;
}

Dataset synth_gaussians(std::size_t classes, std::size_t dims, std::size_t per_class,
                        double separation, std::uint64_t seed, const std::string& split) {
  if (classes < 2) throw DomainError("synth_gaussians: need at least 2 classes");
  if (dims == 0) throw DomainError("synth_gaussians: need at least 1 dimension");
  if (!(separation >= 0.0)) throw DomainError("synth_gaussians: separation must be >= 0");
  // Means at radius sep/sqrt(2): orthogonal ones are exactly sep apart.
  const double radius = separation / std::sqrt(2.0);
  std::vector<double> means(classes * dims, 0.0);
  if (classes <= dims) {
    for (std::size_t l = 0; l < classes; ++l) means[l * dims + l] = radius;
  } else {
    std::mt19937_64 rng(mix_seed(seed, 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < classes; ++l) {
      double norm = 0.0;
      for (std::size_t i = 0; i < dims; ++i) {
        means[l * dims + i] = normal(rng);
        norm += means[l * dims + i] * means[l * dims + i];
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < dims; ++i) means[l * dims + i] *= radius / norm;
    }
  }
  Dataset d;
  d.split = split;
  d.classes = classes;
  const std::size_t count = classes * per_class;
  d.samples = Tensor<float>({count, dims});
  d.labels.resize(count);
  std::mt19937_64 rng(mix_seed(seed, split_salt(split)));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < dims; ++j)
      d.samples[i * dims + j] = static_cast<float>(means[label * dims + j] + noise(rng));
  }
  return d;
}

Tensor<float> augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                      std::mt19937_64& rng) {
  if (batch.rank() != 4) {
    throw ShapeError("augment: expected [batch, channels, height, width], got " +
                     to_string(batch.shape()));
  }
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t ph = h + 2 * policy.pad, pw = w + 2 * policy.pad;
  const std::size_t ch = policy.crop_h == 0 ? h : policy.crop_h;
  const std::size_t cw = policy.crop_w == 0 ? w : policy.crop_w;
  if (ch > ph || cw > pw) {
    throw DomainError("augment: crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                      " larger than padded image " + std::to_string(ph) + "x" +
                      std::to_string(pw));
  }
  if (!(policy.flip_prob >= 0.0 && policy.flip_prob <= 1.0)) {
    throw DomainError("augment: flip probability must lie in [0, 1]");
  }
  Tensor<float> out({n, c, ch, cw});
  std::uniform_int_distribution<std::size_t> row_offset(0, ph - ch);
  std::uniform_int_distribution<std::size_t> col_offset(0, pw - cw);
  std::bernoulli_distribution flip(policy.flip_prob);
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t oy = row_offset(rng);
    const std::size_t ox = col_offset(rng);
    const bool mirrored = flip(rng);
    for (std::size_t k = 0; k < c; ++k) {
      const float* src = batch.data() + (m * c + k) * h * w;
      float* dst = out.data() + (m * c + k) * ch * cw;
      for (std::size_t y = 0; y < ch; ++y) {
        for (std::size_t x = 0; x < cw; ++x) {
          const std::size_t xx = mirrored ? cw - 1 - x : x;
          // Position in the padded image, then back to source coordinates.
          const std::size_t py = y + oy, px = xx + ox;
          float v = 0.0f;
          if (py >= policy.pad && py < policy.pad + h && px >= policy.pad && px < policy.pad + w)
            v = src[(py - policy.pad) * w + (px - policy.pad)];
          dst[y * cw + x] = v;
        }
      }
    }
  }
  return out;
}

Tensor<float> read_csv_samples(const std::string& path, const Shape& sample_shape) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  const std::size_t width = numel(sample_shape);
  std::vector<float> values;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stof(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(path + ":" + std::to_string(line_no) + ": not a number: \"" + cell + "\"");
      }
      ++cols;
    }
    if (cols != width) {
      throw ShapeError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " values, got " + std::to_string(cols));
    }
    ++rows;
  }
  Shape shape{rows};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor<float>(shape, std::move(values));
}

}  // namespace hne
