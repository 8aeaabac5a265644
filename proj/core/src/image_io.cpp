// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "trap/error.hpp"

namespace trap {

namespace {

std::vector<std::uint8_t> to_rgb8(const ImageTensor& img) {
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return bytes;
}

ImageTensor from_rgb8(const std::vector<std::uint8_t>& bytes, int h, int w) {
    ImageTensor img(h, w);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

struct MemReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

void mem_read_fn(png_structp png, png_bytep out, png_size_t count) {
    auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
    if (r->pos + count > r->size) png_error(png, "read past end of buffer");
    std::memcpy(out, r->data + r->pos, count);
    r->pos += count;
}

void mem_write_fn(png_structp png, png_bytep data, png_size_t count) {
    auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    v->insert(v->end(), data, data + count);
}

void mem_flush_fn(png_structp) {}

ImageTensor read_png_struct(png_structp png, png_infop info) {
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return from_rgb8(bytes, h, w);
}

void write_rows(png_structp png, png_infop info, const std::uint8_t* bytes, int h, int w, int color_type,
                int bytes_per_pixel) {
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(bytes + static_cast<std::size_t>(y) * w * bytes_per_pixel);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
}

}  // namespace

ImageTensor read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: decode failed for " + path);
    }
    png_init_io(png, fp);
    ImageTensor img = read_png_struct(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

ImageTensor decode_png(const std::vector<std::uint8_t>& bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("decode_png: libpng init failed");
    }
    MemReader reader{bytes.data(), bytes.size(), 0};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("decode_png: decode failed");
    }
    png_set_read_fn(png, &reader, mem_read_fn);
    ImageTensor img = read_png_struct(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageTensor& img) {
    const auto bytes = to_rgb8(img);
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png: encode failed for " + path);
    }
    png_init_io(png, fp);
    write_rows(png, info, bytes.data(), img.height, img.width, PNG_COLOR_TYPE_RGB, 3);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
    const auto bytes = to_rgb8(img);
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        throw IoError("encode_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("encode_png: encode failed");
    }
    png_set_write_fn(png, &out, mem_write_fn, mem_flush_fn);
    write_rows(png, info, bytes.data(), img.height, img.width, PNG_COLOR_TYPE_RGB, 3);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png_gray(const std::string& path, const Vec& values, int height, int width) {
    if (values.size() != static_cast<std::size_t>(height) * width)
        throw ShapeMismatchError("write_png_gray: size mismatch");
    std::vector<std::uint8_t> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("write_png_gray: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png_gray: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png_gray: encode failed for " + path);
    }
    png_init_io(png, fp);
    write_rows(png, info, bytes.data(), height, width, PNG_COLOR_TYPE_GRAY, 1);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace trap
