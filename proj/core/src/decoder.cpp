// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/decoder.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <semaphore>

#include "trap/decomposer.hpp"
#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/util.hpp"

namespace trap {

void DecoderSettings::validate() const {
    if (!(strength >= 0.0 && strength <= 1.0)) throw Error("decoder settings: strength must be in [0,1]");
    if (!(cfg > 0.0)) throw Error("decoder settings: cfg must be > 0");
    if (steps < 1) throw Error("decoder settings: steps must be >= 1");
}

PromptEmbeddingSequence project_embedding(const Embedding& e_mod, int token_count, int token_dim,
                                          std::uint64_t seed) {
    if (token_count < 1) throw ShapeMismatchError("project_embedding: token_count must be >= 1");
    if (token_dim < 1) throw ShapeMismatchError("project_embedding: token_dim must be >= 1");
    if (!all_finite(e_mod.values)) throw Error("project_embedding: non-finite embedding");
    const int d = e_mod.dim();
    Vec row;
    if (token_dim == d) {
        row = e_mod.values;
    } else if (token_dim > d) {
        row = e_mod.values;
        row.resize(static_cast<std::size_t>(token_dim), 0.0);
    } else {
        Rng rng(mix_seed(seed, "prompt-projection"));
        const Matrix proj = random_gaussian(token_dim, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        row = matvec(proj, e_mod.values);
    }
    PromptEmbeddingSequence seq;
    seq.token_count = token_count;
    seq.token_dim = token_dim;
    seq.data.reserve(static_cast<std::size_t>(token_count) * token_dim);
    for (int t = 0; t < token_count; ++t) seq.data.insert(seq.data.end(), row.begin(), row.end());
    return seq;
}

Vec DiffusionDecoder::vjp(const Embedding&, const ImageTensor&, const DecoderSettings&, const Vec&) const {
    throw Error("decoder: backend is not differentiable");
}

LinearToyDecoder::LinearToyDecoder(Matrix g, int height, int width) : g_(std::move(g)), height_(height), width_(width) {
    if (g_.rows != height * width * ImageTensor::channels)
        throw ShapeMismatchError("LinearToyDecoder: G rows must equal height*width*3");
}

LinearToyDecoder LinearToyDecoder::seeded(int embed_dim, int height, int width, std::uint64_t seed, double scale) {
    Rng rng(mix_seed(seed, "linear-toy-decoder"));
    return LinearToyDecoder(random_gaussian(height * width * ImageTensor::channels, embed_dim, rng, scale), height,
                            width);
}

Vec LinearToyDecoder::boost(const Embedding& e_mod) const {
    if (e_mod.dim() != g_.cols) throw ShapeMismatchError("decode: e_mod dimension mismatch");
    return matvec(g_, e_mod.values);
}

ImageTensor LinearToyDecoder::decode(const Embedding& e_mod, const Embedding&, const ImageTensor& x_init,
                                     const DecoderSettings& settings) const {
    settings.validate();
    x_init.validate();
    if (x_init.height != height_ || x_init.width != width_)
        throw ShapeMismatchError("decode: init image does not match the decoder's configured size");
    const Vec b = boost(e_mod);
    ImageTensor out = x_init;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(out.data[i] + settings.strength * b[i], 0.0, 1.0);
    return out;
}

Vec LinearToyDecoder::vjp(const Embedding& e_mod, const ImageTensor& x_init, const DecoderSettings& settings,
                          const Vec& image_cotangent) const {
    if (image_cotangent.size() != x_init.data.size())
        throw ShapeMismatchError("vjp: cotangent size mismatch");
    const Vec b = boost(e_mod);
    Vec masked(image_cotangent.size());
    for (std::size_t i = 0; i < masked.size(); ++i) {
        const double pre = x_init.data[i] + settings.strength * b[i];
        masked[i] = (pre > 0.0 && pre < 1.0) ? image_cotangent[i] * settings.strength : 0.0;
    }
    return matvec_t(g_, masked);
}

AdjointToyDecoder::AdjointToyDecoder(std::shared_ptr<const ToyEmbedder> embedder, int branch_dim,
                                     std::uint64_t lift_seed, double gain)
    : embedder_(std::move(embedder)), branch_dim_(branch_dim), gain_(gain) {
    if (!embedder_) throw BackendUnavailableError("AdjointToyDecoder: no embedder");
    // write_map = right_inverse(read_out) * lift^T, mapping branch space to
    // the 32x32 patch the embedder reads.
    const Matrix inv = right_inverse(embedder_->image_map());  // (patch^2) x d
    const Matrix lift = SemanticDecomposer::lift_matrix(branch_dim, embedder_->dim(), lift_seed);  // h x d
    write_map_ = matmul(inv, transpose(lift));  // (patch^2) x h
}

Vec AdjointToyDecoder::patch_pattern(const Embedding& e_mod) const {
    if (e_mod.dim() != branch_dim_) throw ShapeMismatchError("decode: e_mod dimension mismatch");
    return matvec(write_map_, e_mod.values);
}

ImageTensor AdjointToyDecoder::decode(const Embedding& e_mod, const Embedding&, const ImageTensor& x_init,
                                      const DecoderSettings& settings) const {
    settings.validate();
    x_init.validate();
    const Vec pattern = patch_pattern(e_mod);
    const Vec up = resize_nearest(pattern, ToyEmbedder::kPatch, ToyEmbedder::kPatch, x_init.height, x_init.width);
    ImageTensor out = x_init;
    const double s = settings.strength * gain_;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const double b = s * up[static_cast<std::size_t>(y) * out.width + x];
            for (int c = 0; c < ImageTensor::channels; ++c)
                out.at(y, x, c) = std::clamp(out.at(y, x, c) + b, 0.0, 1.0);
        }
    return out;
}

Vec AdjointToyDecoder::vjp(const Embedding& e_mod, const ImageTensor& x_init, const DecoderSettings& settings,
                           const Vec& image_cotangent) const {
    if (image_cotangent.size() != x_init.data.size()) throw ShapeMismatchError("vjp: cotangent size mismatch");
    const Vec pattern = patch_pattern(e_mod);
    const Vec up = resize_nearest(pattern, ToyEmbedder::kPatch, ToyEmbedder::kPatch, x_init.height, x_init.width);
    const double s = settings.strength * gain_;
    Vec gray(static_cast<std::size_t>(x_init.height) * x_init.width, 0.0);
    for (int y = 0; y < x_init.height; ++y)
        for (int x = 0; x < x_init.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * x_init.width + x;
            const double b = s * up[p];
            double sum = 0.0;
            for (int c = 0; c < ImageTensor::channels; ++c) {
                const double pre = x_init.at(y, x, c) + b;
                if (pre > 0.0 && pre < 1.0) sum += image_cotangent[p * ImageTensor::channels + c];
            }
            gray[p] = sum * s;
        }
    const Vec down = resize_nearest_adjoint(gray, ToyEmbedder::kPatch, ToyEmbedder::kPatch, x_init.height,
                                            x_init.width);
    return matvec_t(write_map_, down);
}

struct RemoteDiffusionDecoder::Permits {
    explicit Permits(int n) : sem(n) {}
    std::counting_semaphore<64> sem;
};

RemoteDiffusionDecoder::RemoteDiffusionDecoder(Options options)
    : options_(std::move(options)), permits_(std::make_unique<Permits>(std::max(1, options_.permits))) {}

RemoteDiffusionDecoder::~RemoteDiffusionDecoder() = default;

ImageTensor RemoteDiffusionDecoder::decode(const Embedding& e_mod, const Embedding& e_text,
                                           const ImageTensor& x_init, const DecoderSettings& settings) const {
    if (!options_.http.configured()) throw BackendUnavailableError("decoder: no backend configured");
    settings.validate();
    x_init.validate();
    const PromptEmbeddingSequence seq =
        project_embedding(e_mod, options_.token_count, options_.token_dim, options_.projection_seed);
    std::vector<std::uint8_t> raw(seq.data.size() * 4);
    for (std::size_t i = 0; i < seq.data.size(); ++i) {
        const float f = static_cast<float>(seq.data[i]);
        std::memcpy(&raw[i * 4], &f, 4);
    }
    nlohmann::json req;
    req["prompt_embeddings_base64"] = base64_encode(raw);
    req["token_count"] = seq.token_count;
    req["token_dim"] = seq.token_dim;
    req["text_embedding"] = e_text.values;
    req["init_image_png_base64"] = base64_encode(encode_png(x_init));
    req["strength"] = settings.strength;
    req["cfg"] = settings.cfg;
    req["seed"] = settings.seed;
    req["steps"] = settings.steps;

    permits_->sem.acquire();
    std::string body;
    try {
        body = http_post_json(options_.http, options_.path, req.dump());
    } catch (...) {
        permits_->sem.release();
        throw;
    }
    permits_->sem.release();

    const auto json = nlohmann::json::parse(body);
    if (!json.contains("image_png_base64")) throw AdapterError("decoder: response missing 'image_png_base64'");
    ImageTensor out = decode_png(base64_decode(json["image_png_base64"].get<std::string>()));
    if (!out.same_shape(x_init)) throw ShapeMismatchError("decoder: backend returned mismatched image size");
    return out;
}

}  // namespace trap
