// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trap/image.hpp"

namespace trap {

/// 8-bit RGB PNG codec. Any PNG color type is normalized to RGB8 on read.
ImageTensor read_png(const std::string& path);
void write_png(const std::string& path, const ImageTensor& img);

/// 8-bit grayscale PNG with value = round(255 * v), v clamped to [0,1].
void write_png_gray(const std::string& path, const Vec& values, int height, int width);

/// In-memory encode of the 8-bit RGB representation (for wire transfer).
std::vector<std::uint8_t> encode_png(const ImageTensor& img);
ImageTensor decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace trap
