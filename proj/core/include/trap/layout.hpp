// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trap/embedding.hpp"
#include "trap/image.hpp"
#include "trap/linalg.hpp"

namespace trap {

/// Spatial attention mask, values in [0, 1].
struct LayoutMask {
    int height = 0;
    int width = 0;
    Vec values;

    LayoutMask() = default;
    LayoutMask(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    void validate() const;
};

/// Arithmetic mean of all mask entries.
double mask_mean(const LayoutMask& mask);

/// Elementwise product with a foreground probability mask.
LayoutMask refine_with_segmentation(const LayoutMask& mask, const LayoutMask& foreground);

/// Export as 8-bit grayscale PNG, value = round(255 * A).
void save_mask_png(const std::string& path, const LayoutMask& mask);

/// Foreground segmentation backend.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual LayoutMask foreground(const ImageTensor& image) const = 0;
};

/// Offline segmenter: centered box covering `fraction` of each side.
class CenterBoxSegmenter final : public Segmenter {
public:
    explicit CenterBoxSegmenter(double fraction = 0.6);
    LayoutMask foreground(const ImageTensor& image) const override;

private:
    double fraction_;
};

/// Offline heuristic segmenter: Otsu threshold on the grayscale image, the
/// smaller class is taken as foreground.
class OtsuSegmenter final : public Segmenter {
public:
    LayoutMask foreground(const ImageTensor& image) const override;
};

/// Layout generator: concatenated text and image embeddings through an MLP
/// encoder (input -> 512 -> 1024, ReLU), reshaped to (256, 2, 2) and
/// upsampled by five stride-2 transposed convolutions (ReLU between stages,
/// Sigmoid at the end) into a 64x64 raw mask, bilinearly resized to the
/// requested resolution. When the concatenated embeddings are narrower than
/// the declared input width, a fixed seeded linear expander widens the text
/// embedding first. Weights are seeded at construction; there is no
/// training loop for this module.
class LayoutGenerator {
public:
    enum class Init { seeded, zero };

    static constexpr int kRawSize = 64;   // 2 * 2^5
    static constexpr int kEncHidden = 512;
    static constexpr int kEncOut = 1024;  // reshaped to (256, 2, 2)

    /// input_width 0 means the default 3 * image_dim (512 -> 1536).
    LayoutGenerator(int image_dim, std::uint64_t seed, int input_width = 0, Init init = Init::seeded);

    LayoutMask generate(const Embedding& text, const Embedding& image, int out_height, int out_width) const;

    /// Raw 64x64 decoder output before resizing.
    LayoutMask generate_raw(const Embedding& text, const Embedding& image) const;

    int image_dim() const { return image_dim_; }
    int input_width() const { return input_width_; }
    std::uint64_t seed() const { return seed_; }

    void save(const std::string& path) const;
    static LayoutGenerator load(const std::string& path);

private:
    LayoutGenerator() = default;

    struct Deconv {
        int in_ch = 0, out_ch = 0;
        Vec w;  // in_ch * out_ch * 4 * 4
        Vec b;  // out_ch
    };

    Vec assemble_input(const Embedding& text, const Embedding& image) const;

    int image_dim_ = 0;
    int input_width_ = 0;
    std::uint64_t seed_ = 0;

    Matrix expander_;  // (input_width - image_dim) x image_dim; empty when unused
    Matrix fc1_;
    Vec fc1_b_;
    Matrix fc2_;
    Vec fc2_b_;
    std::vector<Deconv> stages_;
};

}  // namespace trap
