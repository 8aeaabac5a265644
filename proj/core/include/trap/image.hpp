// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "trap/linalg.hpp"

namespace trap {

/// H x W x 3 image, interleaved RGB, channel values in [0, 1].
struct ImageTensor {
    static constexpr int channels = 3;

    int height = 0;
    int width = 0;
    Vec data;  // height * width * 3

    ImageTensor() = default;
    ImageTensor(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * channels, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const ImageTensor& o) const { return height == o.height && width == o.width; }

    /// Throws if dimensions are invalid or any value is outside [0, 1].
    void validate() const;
};

ImageTensor clamp01(ImageTensor img);

/// Round channel values to the 8-bit grid (the PNG wire format).
ImageTensor quantize8(ImageTensor img);

/// Per-pixel channel average, length height*width.
Vec to_gray(const ImageTensor& img);

/// Bilinear resample of a single-channel raster (half-pixel centers,
/// clamped borders).
Vec resize_bilinear(const Vec& src, int src_h, int src_w, int dst_h, int dst_w);

/// Adjoint of resize_bilinear as a linear map: scatters a gradient over the
/// destination raster back onto the source raster.
Vec resize_bilinear_adjoint(const Vec& grad_dst, int src_h, int src_w, int dst_h, int dst_w);

/// Nearest-neighbor upsample of a single-channel raster.
Vec resize_nearest(const Vec& src, int src_h, int src_w, int dst_h, int dst_w);
Vec resize_nearest_adjoint(const Vec& grad_dst, int src_h, int src_w, int dst_h, int dst_w);

ImageTensor resize_image_bilinear(const ImageTensor& img, int dst_h, int dst_w);

double max_abs_diff(const ImageTensor& a, const ImageTensor& b);

}  // namespace trap
