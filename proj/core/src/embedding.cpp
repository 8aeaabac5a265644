// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/embedding.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/util.hpp"

namespace trap {

double cosine(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeMismatchError("cosine: length mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values, b.values); }

ToyEmbedder::ToyEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1) throw ShapeMismatchError("ToyEmbedder: dim must be >= 1");
    space_id_ = "toy-d" + std::to_string(dim) + "-s" + std::to_string(seed);
    Rng rng(mix_seed(seed, "toy-embedder"));
    const int patch = kPatch * kPatch;
    map_ = Matrix(dim, patch);
    for (int i = 0; i < dim; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < patch; ++j) {
            const double v = rng.normal();
            map_(i, j) = v;
            n2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (int j = 0; j < patch; ++j) map_(i, j) *= inv;  // unit rows
    }
    bias_ = Vec(static_cast<std::size_t>(dim));
    for (auto& v : bias_) v = rng.normal() * 0.1;
}

Embedding ToyEmbedder::embed_image(const ImageTensor& image) const {
    image.validate();
    const Vec gray = to_gray(image);
    const Vec patch = resize_bilinear(gray, image.height, image.width, kPatch, kPatch);
    Vec out = matvec(map_, patch);
    axpy(1.0, bias_, out);
    return {std::move(out), space_id_};
}

Embedding ToyEmbedder::embed_text(const std::string& text) const {
    if (text.empty()) throw Error("embed_text: empty text");
    Rng rng(mix_seed(seed_, fnv1a64(text)));
    Vec v(static_cast<std::size_t>(dim_));
    for (auto& x : v) x = rng.normal();
    const double n = norm(v);
    for (auto& x : v) x /= n;
    return {std::move(v), space_id_};
}

RemoteEmbedder::RemoteEmbedder(Options options) : options_(std::move(options)) {
    if (options_.declared_dim < 1) throw ShapeMismatchError("RemoteEmbedder: declared_dim must be >= 1");
}

Embedding RemoteEmbedder::parse_response(const std::string& body) const {
    const auto json = nlohmann::json::parse(body);
    if (!json.contains("embedding") || !json["embedding"].is_array())
        throw AdapterError("embedder: response missing 'embedding' array");
    Vec values = json["embedding"].get<Vec>();
    if (static_cast<int>(values.size()) != options_.declared_dim)
        throw ShapeMismatchError("embedder: backend returned dimension " + std::to_string(values.size()) +
                                 ", declared " + std::to_string(options_.declared_dim));
    if (!all_finite(values)) throw AdapterError("embedder: backend returned non-finite values");
    return {std::move(values), options_.space_id};
}

Embedding RemoteEmbedder::embed_image(const ImageTensor& image) const {
    if (!options_.http.configured()) throw BackendUnavailableError("embedder: no backend configured");
    image.validate();
    nlohmann::json req;
    req["image_png_base64"] = base64_encode(encode_png(image));
    return parse_response(http_post_json(options_.http, options_.image_path, req.dump()));
}

Embedding RemoteEmbedder::embed_text(const std::string& text) const {
    if (!options_.http.configured()) throw BackendUnavailableError("embedder: no backend configured");
    if (text.empty()) throw Error("embed_text: empty text");
    nlohmann::json req;
    req["text"] = text;
    return parse_response(http_post_json(options_.http, options_.text_path, req.dump()));
}

}  // namespace trap
