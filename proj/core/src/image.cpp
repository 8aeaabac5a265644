// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/image.hpp"

#include <algorithm>
#include <cmath>

#include "trap/error.hpp"

namespace trap {

void ImageTensor::validate() const {
    if (height < 1 || width < 1) throw ShapeMismatchError("image: height and width must be >= 1");
    if (data.size() != static_cast<std::size_t>(height) * width * channels)
        throw ShapeMismatchError("image: data size inconsistent with dimensions");
    for (double v : data)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("image: channel value outside [0,1]");
}

ImageTensor clamp01(ImageTensor img) {
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

ImageTensor quantize8(ImageTensor img) {
    for (auto& v : img.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return img;
}

Vec to_gray(const ImageTensor& img) {
    Vec g(static_cast<std::size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g[static_cast<std::size_t>(y) * img.width + x] =
                (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    return g;
}

namespace {

struct Tap {
    int i0, i1;
    double w0, w1;
};

// Half-pixel-center bilinear taps along one axis.
Tap tap(int dst, int src_n, int dst_n) {
    const double pos = (dst + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
    double f = std::floor(pos);
    int i0 = static_cast<int>(f);
    double t = pos - f;
    int i1 = i0 + 1;
    i0 = std::clamp(i0, 0, src_n - 1);
    i1 = std::clamp(i1, 0, src_n - 1);
    return {i0, i1, 1.0 - t, t};
}

}  // namespace

Vec resize_bilinear(const Vec& src, int src_h, int src_w, int dst_h, int dst_w) {
    if (src.size() != static_cast<std::size_t>(src_h) * src_w)
        throw ShapeMismatchError("resize_bilinear: source size mismatch");
    Vec dst(static_cast<std::size_t>(dst_h) * dst_w);
    for (int y = 0; y < dst_h; ++y) {
        const Tap ty = tap(y, src_h, dst_h);
        for (int x = 0; x < dst_w; ++x) {
            const Tap tx = tap(x, src_w, dst_w);
            const double v = ty.w0 * (tx.w0 * src[static_cast<std::size_t>(ty.i0) * src_w + tx.i0] +
                                      tx.w1 * src[static_cast<std::size_t>(ty.i0) * src_w + tx.i1]) +
                             ty.w1 * (tx.w0 * src[static_cast<std::size_t>(ty.i1) * src_w + tx.i0] +
                                      tx.w1 * src[static_cast<std::size_t>(ty.i1) * src_w + tx.i1]);
            dst[static_cast<std::size_t>(y) * dst_w + x] = v;
        }
    }
    return dst;
}

Vec resize_bilinear_adjoint(const Vec& grad_dst, int src_h, int src_w, int dst_h, int dst_w) {
    if (grad_dst.size() != static_cast<std::size_t>(dst_h) * dst_w)
        throw ShapeMismatchError("resize_bilinear_adjoint: gradient size mismatch");
    Vec grad_src(static_cast<std::size_t>(src_h) * src_w, 0.0);
    for (int y = 0; y < dst_h; ++y) {
        const Tap ty = tap(y, src_h, dst_h);
        for (int x = 0; x < dst_w; ++x) {
            const Tap tx = tap(x, src_w, dst_w);
            const double g = grad_dst[static_cast<std::size_t>(y) * dst_w + x];
            grad_src[static_cast<std::size_t>(ty.i0) * src_w + tx.i0] += g * ty.w0 * tx.w0;
            grad_src[static_cast<std::size_t>(ty.i0) * src_w + tx.i1] += g * ty.w0 * tx.w1;
            grad_src[static_cast<std::size_t>(ty.i1) * src_w + tx.i0] += g * ty.w1 * tx.w0;
            grad_src[static_cast<std::size_t>(ty.i1) * src_w + tx.i1] += g * ty.w1 * tx.w1;
        }
    }
    return grad_src;
}

namespace {

int nearest_tap(int dst, int src_n, int dst_n) {
    int i = static_cast<int>((dst + 0.5) * static_cast<double>(src_n) / dst_n);
    return std::clamp(i, 0, src_n - 1);
}

}  // namespace

Vec resize_nearest(const Vec& src, int src_h, int src_w, int dst_h, int dst_w) {
    if (src.size() != static_cast<std::size_t>(src_h) * src_w)
        throw ShapeMismatchError("resize_nearest: source size mismatch");
    Vec dst(static_cast<std::size_t>(dst_h) * dst_w);
    for (int y = 0; y < dst_h; ++y) {
        const int sy = nearest_tap(y, src_h, dst_h);
        for (int x = 0; x < dst_w; ++x)
            dst[static_cast<std::size_t>(y) * dst_w + x] =
                src[static_cast<std::size_t>(sy) * src_w + nearest_tap(x, src_w, dst_w)];
    }
    return dst;
}

Vec resize_nearest_adjoint(const Vec& grad_dst, int src_h, int src_w, int dst_h, int dst_w) {
    if (grad_dst.size() != static_cast<std::size_t>(dst_h) * dst_w)
        throw ShapeMismatchError("resize_nearest_adjoint: gradient size mismatch");
    Vec grad_src(static_cast<std::size_t>(src_h) * src_w, 0.0);
    for (int y = 0; y < dst_h; ++y) {
        const int sy = nearest_tap(y, src_h, dst_h);
        for (int x = 0; x < dst_w; ++x)
            grad_src[static_cast<std::size_t>(sy) * src_w + nearest_tap(x, src_w, dst_w)] +=
                grad_dst[static_cast<std::size_t>(y) * dst_w + x];
    }
    return grad_src;
}

ImageTensor resize_image_bilinear(const ImageTensor& img, int dst_h, int dst_w) {
    ImageTensor out(dst_h, dst_w);
    Vec plane(static_cast<std::size_t>(img.height) * img.width);
    for (int c = 0; c < ImageTensor::channels; ++c) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) plane[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
        const Vec r = resize_bilinear(plane, img.height, img.width, dst_h, dst_w);
        for (int y = 0; y < dst_h; ++y)
            for (int x = 0; x < dst_w; ++x) out.at(y, x, c) = r[static_cast<std::size_t>(y) * dst_w + x];
    }
    return out;
}

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw ShapeMismatchError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace trap
