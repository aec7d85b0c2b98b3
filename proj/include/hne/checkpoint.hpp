// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hne/params.hpp"
#include "hne/train.hpp"

namespace hne {

// File layout, all integers little-endian:
//   "HNE1"  u32 version
//   u32 header length, header JSON (tree spec, master seed, init scheme,
//       training progress, batch-norm "recorded" flags)
//   u32 tensor count, then per tensor:
//       u16 name length, name, u32 rank, u64 extents..., f32 values
//   u32 CRC-32 of every preceding byte

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore<float> params;
  std::optional<OptimizerState<float>> optimizer;
};

std::vector<unsigned char> encode_checkpoint(const ParamStore<float>& params,
                                             const OptimizerState<float>* optimizer = nullptr);
/// Throws ChecksumError, ParseError or Error (bad magic or version).
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const OptimizerState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

/// Loads a checkpoint that must have been written for `expected`.
Checkpoint load_checkpoint_for(const std::string& path, const TreeSpec& expected);

}  // namespace hne
