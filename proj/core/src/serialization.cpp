// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/serialization.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "trap/error.hpp"
#include "trap/rng.hpp"

namespace trap {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("serialization: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
    const std::uint64_t lo = get_u32(is);
    const std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

void put_f32_block(std::ostream& os, const Vec& v) {
    for (double x : v) {
        const float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
}

Vec get_f32_block(std::istream& is, std::size_t count) {
    Vec v(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v[i] = static_cast<double>(f);
    }
    return v;
}

}  // namespace

void save_embedding(const std::string& path, const Embedding& e) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_embedding: cannot open " + path);
    put_u32(os, static_cast<std::uint32_t>(e.values.size()));
    const std::uint64_t h1 = fnv1a64(e.space_id);
    const std::uint64_t h2 = fnv1a64(e.space_id + "#1");
    put_u64(os, h1);
    put_u32(os, static_cast<std::uint32_t>(h2));
    put_f32_block(os, e.values);
    if (!os) throw IoError("save_embedding: write failed for " + path);
}

Embedding load_embedding(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_embedding: cannot open " + path);
    const std::uint32_t dim = get_u32(is);
    const std::uint64_t h1 = get_u64(is);
    const std::uint32_t h2 = get_u32(is);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "hash:%016llx%08x", static_cast<unsigned long long>(h1), h2);
    Embedding e;
    e.space_id = hex;
    e.values = get_f32_block(is, dim);
    if (!is) throw IoError("load_embedding: truncated file " + path);
    return e;
}

void write_weights_file(const std::string& path, const WeightsHeader& header, const std::vector<const Vec*>& blocks) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("write_weights_file: cannot open " + path);
    put_u32(os, header.mode);
    put_u32(os, header.d);
    put_u32(os, header.h);
    put_u64(os, header.seed);
    for (const Vec* b : blocks) put_f32_block(os, *b);
    if (!os) throw IoError("write_weights_file: write failed for " + path);
}

WeightsHeader read_weights_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_weights_header: cannot open " + path);
    WeightsHeader h;
    h.mode = get_u32(is);
    h.d = get_u32(is);
    h.h = get_u32(is);
    h.seed = get_u64(is);
    return h;
}

std::vector<Vec> read_weights_file(const std::string& path, WeightsHeader& header,
                                   const std::vector<std::size_t>& block_sizes) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_weights_file: cannot open " + path);
    header.mode = get_u32(is);
    header.d = get_u32(is);
    header.h = get_u32(is);
    header.seed = get_u64(is);
    std::vector<Vec> blocks;
    blocks.reserve(block_sizes.size());
    for (std::size_t n : block_sizes) blocks.push_back(get_f32_block(is, n));
    if (!is) throw IoError("read_weights_file: truncated file " + path);
    return blocks;
}

}  // namespace trap
