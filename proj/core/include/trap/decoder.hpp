// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "trap/embedding.hpp"
#include "trap/http.hpp"
#include "trap/image.hpp"

namespace trap {

struct DecoderSettings {
    double strength = 0.5;  // image-to-image denoising strength in [0, 1]
    double cfg = 7.5;       // classifier-free guidance scale > 0
    std::uint64_t seed = 0;
    int steps = 30;  // sampler steps; the toy backends ignore this

    void validate() const;
};

/// Token-level conditioning sequence injected into the generative backend.
struct PromptEmbeddingSequence {
    int token_count = 0;
    int token_dim = 0;
    Vec data;  // token_count * token_dim, row-major

    const double* row(int t) const { return &data[static_cast<std::size_t>(t) * token_dim]; }
};

/// Repeats the modulated embedding across `token_count` rows. When the
/// widths differ, each row is a fixed projection of the embedding:
/// identity-extension (zero pad) when token_dim >= dim, a seeded Gaussian
/// projection when token_dim < dim.
PromptEmbeddingSequence project_embedding(const Embedding& e_mod, int token_count, int token_dim,
                                          std::uint64_t seed = 0);

/// Generative decoder behind a backend interface. Implementations hold
/// read-only state after construction; decode calls are independent.
class DiffusionDecoder {
public:
    virtual ~DiffusionDecoder() = default;

    /// Output has the dimensions of x_init; deterministic under a fixed
    /// seed. Toy backends: x = clamp(x_init + strength * G(e_mod), 0, 1)
    /// with G a fixed linear map, so the decode is differentiable in e_mod.
    virtual ImageTensor decode(const Embedding& e_mod, const Embedding& e_text, const ImageTensor& x_init,
                               const DecoderSettings& settings) const = 0;

    virtual bool differentiable() const = 0;

    /// Vector-Jacobian product of decode with respect to e_mod: the image
    /// cotangent is pulled back through clamp and G. Throws on backends
    /// that are not differentiable.
    virtual Vec vjp(const Embedding& e_mod, const ImageTensor& x_init, const DecoderSettings& settings,
                    const Vec& image_cotangent) const;

    /// Expected e_mod dimension.
    virtual int embed_dim() const = 0;
};

/// Toy backend with an explicit G matrix of shape (height*width*3) x dim.
/// Accepts only init images of the constructed size.
class LinearToyDecoder final : public DiffusionDecoder {
public:
    LinearToyDecoder(Matrix g, int height, int width);
    static LinearToyDecoder seeded(int embed_dim, int height, int width, std::uint64_t seed, double scale = 0.05);

    ImageTensor decode(const Embedding& e_mod, const Embedding& e_text, const ImageTensor& x_init,
                       const DecoderSettings& settings) const override;
    bool differentiable() const override { return true; }
    Vec vjp(const Embedding& e_mod, const ImageTensor& x_init, const DecoderSettings& settings,
            const Vec& image_cotangent) const override;
    int embed_dim() const override { return g_.cols; }

private:
    Vec boost(const Embedding& e_mod) const;
    Matrix g_;
    int height_, width_;
};

/// Toy backend coupled to the toy embedder: G writes into the image exactly
/// the pattern the embedder's fixed linear read-out recovers, the same way
/// a real generative decoder writes semantics the joint embedder re-reads.
/// G(e) = gain * upsample(right_inverse(read_out) * lift^T * e), replicated
/// across channels. Works for any init-image size; the decode -> re-embed
/// round trip is exact when the image side is a multiple of the embedder
/// patch size.
class AdjointToyDecoder final : public DiffusionDecoder {
public:
    AdjointToyDecoder(std::shared_ptr<const ToyEmbedder> embedder, int branch_dim, std::uint64_t lift_seed,
                      double gain = 1.0);

    ImageTensor decode(const Embedding& e_mod, const Embedding& e_text, const ImageTensor& x_init,
                       const DecoderSettings& settings) const override;
    bool differentiable() const override { return true; }
    Vec vjp(const Embedding& e_mod, const ImageTensor& x_init, const DecoderSettings& settings,
            const Vec& image_cotangent) const override;
    int embed_dim() const override { return branch_dim_; }

    double gain() const { return gain_; }

private:
    Vec patch_pattern(const Embedding& e_mod) const;  // 32x32 grayscale write pattern
    std::shared_ptr<const ToyEmbedder> embedder_;
    int branch_dim_;
    double gain_;
    Matrix write_map_;  // (patch*patch) x branch_dim
};

/// HTTP adapter for a pretrained image-to-image generative service.
/// POST /decode {"prompt_embeddings_base64": f32le token_count x token_dim,
///               "token_count", "token_dim", "text": ..., "init_image_png_base64": ...,
///               "strength", "cfg", "seed", "steps"} -> {"image_png_base64": ...}
/// Not differentiable: the perceptual term then acts as an acceptance
/// filter in the optimizer instead of contributing a gradient.
class RemoteDiffusionDecoder final : public DiffusionDecoder {
public:
    struct Options {
        HttpOptions http;
        std::string path = "/decode";
        int embed_dim = 1024;
        int token_count = 77;
        int token_dim = 1024;
        std::uint64_t projection_seed = 0;
        int permits = 1;  // concurrent decode limit (device memory bound)
    };

    explicit RemoteDiffusionDecoder(Options options);
    ~RemoteDiffusionDecoder() override;

    ImageTensor decode(const Embedding& e_mod, const Embedding& e_text, const ImageTensor& x_init,
                       const DecoderSettings& settings) const override;
    bool differentiable() const override { return false; }
    int embed_dim() const override { return options_.embed_dim; }

private:
    Options options_;
    struct Permits;
    std::unique_ptr<Permits> permits_;
};

}  // namespace trap
