// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "trap/http.hpp"
#include "trap/image.hpp"
#include "trap/linalg.hpp"

namespace trap {

/// Point in the joint image-text embedding space. Stored unnormalized;
/// normalization happens inside cosine().
struct Embedding {
    Vec values;
    std::string space_id;

    Embedding() = default;
    Embedding(Vec v, std::string id) : values(std::move(v)), space_id(std::move(id)) {}

    int dim() const { return static_cast<int>(values.size()); }
};

/// Cosine similarity in [-1, 1]. Throws on length mismatch or a zero vector.
double cosine(const Embedding& a, const Embedding& b);
double cosine(const Vec& a, const Vec& b);

/// Joint image-text embedder. Implementations are read-only after load and
/// safe for concurrent use.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dim() const = 0;
    virtual const std::string& space_id() const = 0;
    virtual Embedding embed_image(const ImageTensor& image) const = 0;
    virtual Embedding embed_text(const std::string& text) const = 0;
};

/// Offline embedder: images are grayscale-downsampled to a 32x32 patch and
/// pushed through a fixed seeded affine map; text is hashed into the seed of
/// a unit Gaussian direction. Everything is reproducible from (dim, seed).
class ToyEmbedder final : public Embedder {
public:
    static constexpr int kPatch = 32;

    explicit ToyEmbedder(int dim = 64, std::uint64_t seed = 17);

    int dim() const override { return dim_; }
    const std::string& space_id() const override { return space_id_; }
    Embedding embed_image(const ImageTensor& image) const override;
    Embedding embed_text(const std::string& text) const override;

    /// Read-out map and bias of the image path: embed = map * patch + bias.
    const Matrix& image_map() const { return map_; }
    const Vec& image_bias() const { return bias_; }
    std::uint64_t seed() const { return seed_; }

private:
    int dim_;
    std::uint64_t seed_;
    Matrix map_;  // dim x (32*32)
    Vec bias_;
    std::string space_id_;
};

/// HTTP adapter for a pretrained embedding service (the production path).
/// POST {image_path}  body {"image_png_base64": ...} -> {"embedding": [...]}
/// POST {text_path}   body {"text": ...}             -> {"embedding": [...]}
class RemoteEmbedder final : public Embedder {
public:
    struct Options {
        HttpOptions http;
        std::string image_path = "/embed/image";
        std::string text_path = "/embed/text";
        int declared_dim = 512;
        std::string space_id = "clip-vit-b32";
    };

    explicit RemoteEmbedder(Options options);

    int dim() const override { return options_.declared_dim; }
    const std::string& space_id() const override { return options_.space_id; }
    Embedding embed_image(const ImageTensor& image) const override;
    Embedding embed_text(const std::string& text) const override;

private:
    Embedding parse_response(const std::string& body) const;
    Options options_;
};

}  // namespace trap
