// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trap/embedding.hpp"

namespace trap {

/// Embedding record: 16-byte header (u32 little-endian dimension, then a
/// 96-bit space-id fingerprint = bytes 0..7 of fnv1a64(id) followed by bytes
/// 0..3 of fnv1a64(id + "#1")), then dim float32 little-endian values.
void save_embedding(const std::string& path, const Embedding& e);

/// Loads values and the fingerprint; the original space-id string is not
/// recoverable, so space_id comes back as "hash:<24 hex digits>".
Embedding load_embedding(const std::string& path);

/// Shared weights-file format for the decomposer and the layout generator:
/// header {u32 mode, u32 d, u32 h, u64 seed} followed by the parameter
/// blocks as raw float32 little-endian, in declaration order. Block sizes
/// are derived from the header by the caller.
struct WeightsHeader {
    std::uint32_t mode = 0;
    std::uint32_t d = 0;
    std::uint32_t h = 0;
    std::uint64_t seed = 0;
};

void write_weights_file(const std::string& path, const WeightsHeader& header, const std::vector<const Vec*>& blocks);

/// Reads the header and splits the payload according to `block_sizes`
/// (computed by the caller from the header). Throws IoError on truncation.
std::vector<Vec> read_weights_file(const std::string& path, WeightsHeader& header,
                                   const std::vector<std::size_t>& block_sizes);

/// Reads only the header (to decide block sizes before a full read).
WeightsHeader read_weights_header(const std::string& path);

}  // namespace trap
