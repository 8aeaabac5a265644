// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "trap/decoder.hpp"
#include "trap/decomposer.hpp"
#include "trap/embedding.hpp"
#include "trap/http.hpp"
#include "trap/image.hpp"

namespace trap {

struct LossWeights {
    double lambda1 = 1.0;  // perceptual
    double lambda2 = 1.0;  // semantic alignment
    double lambda3 = 0.5;  // distinctive feature preservation

    void validate() const;
};

struct LossBreakdown {
    double lpips = 0.0;
    double sem = 0.0;
    double dist = 0.0;
    double total = 0.0;
    Vec gradient;  // with respect to e_adv
    int iteration = 0;
    int step = 0;
};

/// Perceptual distance backend.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual double distance(const ImageTensor& a, const ImageTensor& b) const = 0;
    /// d distance / d a; throws if has_gradient() is false.
    virtual Vec gradient(const ImageTensor& a, const ImageTensor& b) const;
    virtual bool has_gradient() const { return false; }
};

/// Offline perceptual metric: mean squared difference over a fixed filter
/// bank (identity band plus a 3x3 Laplacian band-pass, zero padding,
/// per channel), equally weighted. Zero iff the images are identical;
/// symmetric by construction.
class FilterBankMetric final : public PerceptualMetric {
public:
    double distance(const ImageTensor& a, const ImageTensor& b) const override;
    Vec gradient(const ImageTensor& a, const ImageTensor& b) const override;
    bool has_gradient() const override { return true; }
};

/// HTTP adapter for a learned perceptual metric service.
/// POST /lpips {"image_a_png_base64", "image_b_png_base64"} -> {"distance"}
class RemotePerceptualMetric final : public PerceptualMetric {
public:
    struct Options {
        HttpOptions http;
        std::string path = "/lpips";
    };
    explicit RemotePerceptualMetric(Options options) : options_(std::move(options)) {}
    double distance(const ImageTensor& a, const ImageTensor& b) const override;

private:
    Options options_;
};

/// Perceptual similarity between a candidate and the target.
double lpips_loss(const ImageTensor& a, const ImageTensor& b, const PerceptualMetric& metric);

/// 1 - cos(e_adv, e_text), in [0, 2].
double semantic_loss(const Embedding& e_adv, const Embedding& e_text);
Vec semantic_loss_gradient(const Embedding& e_adv, const Embedding& e_text);

/// Squared Euclidean distance between the distinctive branches.
double dist_loss(const Decomposition& adv, const Decomposition& target);
/// d dist_loss / d (adv distinctive branch) = 2 (adv - target).
Vec dist_loss_branch_gradient(const Decomposition& adv, const Decomposition& target);

/// How the image-space perceptual term reaches embedding-space gradients.
/// With a differentiable (toy) decoder the term is backpropagated through
/// decode; with a generative backend it contributes no gradient and the
/// optimizer applies it as an acceptance filter instead. Null members
/// silence the corresponding gradient contribution.
struct GradientRoute {
    const SemanticDecomposer* decomposer = nullptr;
    double fusion_scale = 1.0;  // mean of the refined layout mask
    const DiffusionDecoder* decoder = nullptr;
    const ImageTensor* x_init = nullptr;
    DecoderSettings settings;
};

/// Weighted combination of the three terms plus the assembled gradient with
/// respect to e_adv.
LossBreakdown total_loss(const Embedding& e_adv, const Embedding& e_text, const ImageTensor& x_cand,
                         const ImageTensor& x_target, const Decomposition& dec_adv, const Decomposition& dec_target,
                         const LossWeights& weights, const PerceptualMetric& metric, const GradientRoute& route);

}  // namespace trap
