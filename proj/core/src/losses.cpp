// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/losses.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/util.hpp"

namespace trap {

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0) || !std::isfinite(lambda1) ||
        !std::isfinite(lambda2) || !std::isfinite(lambda3))
        throw Error("loss weights: lambdas must be finite and >= 0");
    if (lambda1 == 0.0 && lambda2 == 0.0 && lambda3 == 0.0) throw Error("loss weights: not all lambdas may be zero");
}

Vec PerceptualMetric::gradient(const ImageTensor&, const ImageTensor&) const {
    throw Error("perceptual metric: backend has no gradient");
}

namespace {

// 3x3 Laplacian band-pass, zero padding. Symmetric kernel, so the adjoint
// of the convolution is the convolution itself.
constexpr double kLap[3][3] = {{0, -1, 0}, {-1, 4, -1}, {0, -1, 0}};

Vec laplacian(const Vec& plane, int h, int w) {
    Vec out(plane.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    s += kLap[dy + 1][dx + 1] * plane[static_cast<std::size_t>(yy) * w + xx];
                }
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    return out;
}

Vec channel_plane(const ImageTensor& img, int c) {
    Vec p(static_cast<std::size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
    return p;
}

constexpr double kBandWeight = 0.5;  // identity band and Laplacian band

}  // namespace

double FilterBankMetric::distance(const ImageTensor& a, const ImageTensor& b) const {
    if (!a.same_shape(b)) throw ShapeMismatchError("perceptual distance: dimension mismatch");
    const std::size_t n = static_cast<std::size_t>(a.height) * a.width;
    double mse_id = 0.0, mse_lap = 0.0;
    for (int c = 0; c < ImageTensor::channels; ++c) {
        const Vec pa = channel_plane(a, c);
        const Vec pb = channel_plane(b, c);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pa[i] - pb[i];
            mse_id += d * d;
        }
        const Vec la = laplacian(pa, a.height, a.width);
        const Vec lb = laplacian(pb, b.height, b.width);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = la[i] - lb[i];
            mse_lap += d * d;
        }
    }
    const double denom = static_cast<double>(n) * ImageTensor::channels;
    return kBandWeight * mse_id / denom + kBandWeight * mse_lap / denom;
}

Vec FilterBankMetric::gradient(const ImageTensor& a, const ImageTensor& b) const {
    if (!a.same_shape(b)) throw ShapeMismatchError("perceptual gradient: dimension mismatch");
    const std::size_t n = static_cast<std::size_t>(a.height) * a.width;
    const double denom = static_cast<double>(n) * ImageTensor::channels;
    Vec grad(a.data.size(), 0.0);
    for (int c = 0; c < ImageTensor::channels; ++c) {
        const Vec pa = channel_plane(a, c);
        const Vec pb = channel_plane(b, c);
        Vec diff(n);
        for (std::size_t i = 0; i < n; ++i) diff[i] = pa[i] - pb[i];
        const Vec la = laplacian(pa, a.height, a.width);
        const Vec lb = laplacian(pb, b.height, b.width);
        Vec ldiff(n);
        for (std::size_t i = 0; i < n; ++i) ldiff[i] = la[i] - lb[i];
        const Vec lback = laplacian(ldiff, a.height, a.width);  // adjoint == forward (symmetric kernel)
        for (std::size_t i = 0; i < n; ++i) {
            const double g = 2.0 * kBandWeight * (diff[i] + lback[i]) / denom;
            grad[i * ImageTensor::channels + c] = g;
        }
    }
    return grad;
}

double RemotePerceptualMetric::distance(const ImageTensor& a, const ImageTensor& b) const {
    if (!options_.http.configured()) throw BackendUnavailableError("perceptual metric: no backend configured");
    if (!a.same_shape(b)) throw ShapeMismatchError("perceptual distance: dimension mismatch");
    nlohmann::json req;
    req["image_a_png_base64"] = base64_encode(encode_png(a));
    req["image_b_png_base64"] = base64_encode(encode_png(b));
    const auto json = nlohmann::json::parse(http_post_json(options_.http, options_.path, req.dump()));
    if (!json.contains("distance")) throw AdapterError("perceptual metric: response missing 'distance'");
    return json["distance"].get<double>();
}

double lpips_loss(const ImageTensor& a, const ImageTensor& b, const PerceptualMetric& metric) {
    return metric.distance(a, b);
}

double semantic_loss(const Embedding& e_adv, const Embedding& e_text) { return 1.0 - cosine(e_adv, e_text); }

Vec semantic_loss_gradient(const Embedding& e_adv, const Embedding& e_text) {
    const double na = norm(e_adv.values);
    const double nb = norm(e_text.values);
    if (e_adv.dim() != e_text.dim()) throw ShapeMismatchError("semantic_loss: length mismatch");
    if (na == 0.0 || nb == 0.0) throw Error("semantic_loss: zero vector");
    const double c = dot(e_adv.values, e_text.values) / (na * nb);
    Vec g(e_adv.values.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = -(e_text.values[i] / (na * nb) - c * e_adv.values[i] / (na * na));
    return g;
}

double dist_loss(const Decomposition& adv, const Decomposition& target) {
    const Vec d = sub(adv.distinctive.values, target.distinctive.values);
    return dot(d, d);
}

Vec dist_loss_branch_gradient(const Decomposition& adv, const Decomposition& target) {
    Vec d = sub(adv.distinctive.values, target.distinctive.values);
    for (auto& v : d) v *= 2.0;
    return d;
}

LossBreakdown total_loss(const Embedding& e_adv, const Embedding& e_text, const ImageTensor& x_cand,
                         const ImageTensor& x_target, const Decomposition& dec_adv, const Decomposition& dec_target,
                         const LossWeights& weights, const PerceptualMetric& metric, const GradientRoute& route) {
    weights.validate();
    LossBreakdown out;
    out.lpips = lpips_loss(x_cand, x_target, metric);
    out.sem = semantic_loss(e_adv, e_text);
    out.dist = dist_loss(dec_adv, dec_target);
    out.total = weights.lambda1 * out.lpips + weights.lambda2 * out.sem + weights.lambda3 * out.dist;

    out.gradient.assign(e_adv.values.size(), 0.0);
    if (weights.lambda2 != 0.0) axpy(weights.lambda2, semantic_loss_gradient(e_adv, e_text), out.gradient);
    if (weights.lambda3 != 0.0 && route.decomposer) {
        const Vec branch_grad = dist_loss_branch_gradient(dec_adv, dec_target);
        axpy(weights.lambda3, route.decomposer->vjp(e_adv, {}, branch_grad), out.gradient);
    }
    if (weights.lambda1 != 0.0 && route.decomposer && route.decoder && route.decoder->differentiable() &&
        route.x_init && metric.has_gradient()) {
        // lpips(decode(mean(A) * common(e_adv)), x_target) pulled back to e_adv.
        Embedding e_mod;
        e_mod.values = scaled(dec_adv.common.values, route.fusion_scale);
        e_mod.space_id = dec_adv.common.space_id;
        const Vec img_grad = metric.gradient(x_cand, x_target);
        Vec mod_grad = route.decoder->vjp(e_mod, *route.x_init, route.settings, img_grad);
        for (auto& v : mod_grad) v *= route.fusion_scale;
        axpy(weights.lambda1, route.decomposer->vjp(e_adv, mod_grad, {}), out.gradient);
    }
    return out;
}

}  // namespace trap
