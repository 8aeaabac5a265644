// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/layout.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/serialization.hpp"

namespace trap {

void LayoutMask::validate() const {
    if (height < 1 || width < 1) throw ShapeMismatchError("mask: height and width must be >= 1");
    if (values.size() != static_cast<std::size_t>(height) * width)
        throw ShapeMismatchError("mask: value count inconsistent with dimensions");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("mask: value outside [0,1]");
}

double mask_mean(const LayoutMask& mask) {
    mask.validate();
    double s = 0.0;
    for (double v : mask.values) s += v;
    return s / static_cast<double>(mask.values.size());
}

LayoutMask refine_with_segmentation(const LayoutMask& mask, const LayoutMask& foreground) {
    if (mask.height != foreground.height || mask.width != foreground.width)
        throw ShapeMismatchError("refine_with_segmentation: dimension mismatch");
    LayoutMask out = mask;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= foreground.values[i];
    return out;
}

void save_mask_png(const std::string& path, const LayoutMask& mask) {
    write_png_gray(path, mask.values, mask.height, mask.width);
}

CenterBoxSegmenter::CenterBoxSegmenter(double fraction) : fraction_(std::clamp(fraction, 0.0, 1.0)) {}

LayoutMask CenterBoxSegmenter::foreground(const ImageTensor& image) const {
    LayoutMask fg(image.height, image.width, 0.0);
    const int bh = std::max(1, static_cast<int>(std::lround(image.height * fraction_)));
    const int bw = std::max(1, static_cast<int>(std::lround(image.width * fraction_)));
    const int y0 = (image.height - bh) / 2;
    const int x0 = (image.width - bw) / 2;
    for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x) fg.at(y, x) = 1.0;
    return fg;
}

LayoutMask OtsuSegmenter::foreground(const ImageTensor& image) const {
    const Vec gray = to_gray(image);
    std::array<int, 256> hist{};
    for (double g : gray) hist[static_cast<int>(std::clamp(g, 0.0, 1.0) * 255.0)]++;
    const double total = static_cast<double>(gray.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
    double sum_b = 0.0, w_b = 0.0, best_sigma = -1.0;
    int threshold = 127;
    for (int t = 0; t < 256; ++t) {
        w_b += hist[t];
        if (w_b == 0.0) continue;
        const double w_f = total - w_b;
        if (w_f == 0.0) break;
        sum_b += t * hist[t];
        const double m_b = sum_b / w_b;
        const double m_f = (sum_all - sum_b) / w_f;
        const double sigma = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if (sigma > best_sigma) {
            best_sigma = sigma;
            threshold = t;
        }
    }
    // Smaller class is the object; ties go to the brighter side.
    auto bin_of = [](double g) { return static_cast<int>(std::clamp(g, 0.0, 1.0) * 255.0); };
    std::size_t bright = 0;
    for (double g : gray)
        if (bin_of(g) > threshold) ++bright;
    const bool bright_is_fg = bright <= gray.size() - bright;
    LayoutMask fg(image.height, image.width, 0.0);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const bool is_bright = bin_of(gray[i]) > threshold;
        fg.values[i] = (is_bright == bright_is_fg) ? 1.0 : 0.0;
    }
    return fg;
}

namespace {

constexpr int kKernel = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;
constexpr std::array<int, 6> kChannels = {256, 128, 64, 32, 16, 1};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

LayoutGenerator::LayoutGenerator(int image_dim, std::uint64_t seed, int input_width, Init init)
    : image_dim_(image_dim), input_width_(input_width > 0 ? input_width : 3 * image_dim), seed_(seed) {
    if (image_dim < 1) throw ShapeMismatchError("layout: image_dim must be >= 1");
    if (input_width_ <= image_dim_) throw ShapeMismatchError("layout: input width must exceed image_dim");
    Rng rng(mix_seed(seed, "layout-weights"));
    const bool zero = init == Init::zero;
    auto gauss = [&](int rows, int cols, double scale) {
        return zero ? Matrix(rows, cols) : random_gaussian(rows, cols, rng, scale);
    };
    const int text_width = input_width_ - image_dim_;
    expander_ = gauss(text_width, image_dim_, 1.0 / std::sqrt(static_cast<double>(image_dim_)));
    fc1_ = gauss(kEncHidden, input_width_, 1.0 / std::sqrt(static_cast<double>(input_width_)));
    fc1_b_.assign(kEncHidden, 0.0);
    fc2_ = gauss(kEncOut, kEncHidden, 1.0 / std::sqrt(static_cast<double>(kEncHidden)));
    fc2_b_.assign(kEncOut, 0.0);
    stages_.resize(5);
    for (int s = 0; s < 5; ++s) {
        auto& st = stages_[s];
        st.in_ch = kChannels[s];
        st.out_ch = kChannels[s + 1];
        const std::size_t count = static_cast<std::size_t>(st.in_ch) * st.out_ch * kKernel * kKernel;
        st.w.assign(count, 0.0);
        // 3x gain keeps the pre-sigmoid logits spread out enough that masks
        // have visible structure instead of collapsing to 0.5 everywhere.
        const double scale = 3.0 / std::sqrt(static_cast<double>(st.in_ch) * kKernel * kKernel);
        if (!zero)
            for (auto& v : st.w) v = rng.normal() * scale;
        st.b.assign(static_cast<std::size_t>(st.out_ch), 0.0);
    }
}

Vec LayoutGenerator::assemble_input(const Embedding& text, const Embedding& image) const {
    if (image.dim() != image_dim_)
        throw ShapeMismatchError("layout: image embedding has dimension " + std::to_string(image.dim()) +
                                 ", expected " + std::to_string(image_dim_));
    Vec input;
    input.reserve(static_cast<std::size_t>(input_width_));
    if (text.dim() + image.dim() == input_width_) {
        input.insert(input.end(), text.values.begin(), text.values.end());
    } else if (text.dim() == image_dim_) {
        const Vec expanded = matvec(expander_, text.values);
        input.insert(input.end(), expanded.begin(), expanded.end());
    } else {
        throw ShapeMismatchError("layout: text embedding of dimension " + std::to_string(text.dim()) +
                                 " cannot fill declared input width " + std::to_string(input_width_));
    }
    input.insert(input.end(), image.values.begin(), image.values.end());
    return input;
}

LayoutMask LayoutGenerator::generate_raw(const Embedding& text, const Embedding& image) const {
    const Vec input = assemble_input(text, image);
    Vec h1 = matvec(fc1_, input);
    axpy(1.0, fc1_b_, h1);
    for (auto& v : h1) v = v > 0.0 ? v : 0.0;
    Vec latent = matvec(fc2_, h1);
    axpy(1.0, fc2_b_, latent);

    // latent reshapes to (256, 2, 2); five stride-2 transposed convolutions
    // take it to (1, 64, 64).
    int size = 2;
    Vec feat = latent;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        const auto& st = stages_[s];
        const int out_size = size * kStride;
        Vec out(static_cast<std::size_t>(st.out_ch) * out_size * out_size, 0.0);
        for (int ci = 0; ci < st.in_ch; ++ci) {
            const double* in_plane = &feat[static_cast<std::size_t>(ci) * size * size];
            for (int co = 0; co < st.out_ch; ++co) {
                const double* k = &st.w[(static_cast<std::size_t>(ci) * st.out_ch + co) * kKernel * kKernel];
                double* out_plane = &out[static_cast<std::size_t>(co) * out_size * out_size];
                for (int iy = 0; iy < size; ++iy) {
                    for (int ix = 0; ix < size; ++ix) {
                        const double v = in_plane[static_cast<std::size_t>(iy) * size + ix];
                        if (v == 0.0) continue;
                        for (int ky = 0; ky < kKernel; ++ky) {
                            const int oy = iy * kStride + ky - kPad;
                            if (oy < 0 || oy >= out_size) continue;
                            for (int kx = 0; kx < kKernel; ++kx) {
                                const int ox = ix * kStride + kx - kPad;
                                if (ox < 0 || ox >= out_size) continue;
                                out_plane[static_cast<std::size_t>(oy) * out_size + ox] +=
                                    v * k[static_cast<std::size_t>(ky) * kKernel + kx];
                            }
                        }
                    }
                }
            }
        }
        for (int co = 0; co < st.out_ch; ++co) {
            double* out_plane = &out[static_cast<std::size_t>(co) * out_size * out_size];
            const double bias = st.b[co];
            const bool last = s + 1 == stages_.size();
            for (int i = 0; i < out_size * out_size; ++i) {
                const double z = out_plane[i] + bias;
                out_plane[i] = last ? sigmoid(z) : (z > 0.0 ? z : 0.0);
            }
        }
        feat = std::move(out);
        size = out_size;
    }

    LayoutMask mask(kRawSize, kRawSize);
    mask.values = std::move(feat);
    return mask;
}

LayoutMask LayoutGenerator::generate(const Embedding& text, const Embedding& image, int out_height,
                                     int out_width) const {
    if (out_height < 1 || out_width < 1) throw ShapeMismatchError("layout: output dimensions must be >= 1");
    LayoutMask raw = generate_raw(text, image);
    LayoutMask mask(out_height, out_width);
    mask.values = resize_bilinear(raw.values, kRawSize, kRawSize, out_height, out_width);
    // Bilinear interpolation is convex, but guard the boundary against
    // floating round-off all the same.
    for (auto& v : mask.values) v = std::clamp(v, 0.0, 1.0);
    return mask;
}

void LayoutGenerator::save(const std::string& path) const {
    WeightsHeader header;
    header.mode = 2;  // layout weights share the decomposer file format
    header.d = static_cast<std::uint32_t>(image_dim_);
    header.h = static_cast<std::uint32_t>(input_width_);
    header.seed = seed_;
    std::vector<const Vec*> blocks = {&expander_.a, &fc1_.a, &fc1_b_, &fc2_.a, &fc2_b_};
    for (const auto& st : stages_) {
        blocks.push_back(&st.w);
        blocks.push_back(&st.b);
    }
    write_weights_file(path, header, blocks);
}

LayoutGenerator LayoutGenerator::load(const std::string& path) {
    WeightsHeader header = read_weights_header(path);
    if (header.mode != 2) throw IoError("layout load: unexpected mode " + std::to_string(header.mode));
    const int d = static_cast<int>(header.d);
    const int iw = static_cast<int>(header.h);
    std::vector<std::size_t> sizes = {static_cast<std::size_t>(iw - d) * d, static_cast<std::size_t>(kEncHidden) * iw,
                                      kEncHidden, static_cast<std::size_t>(kEncOut) * kEncHidden, kEncOut};
    for (int s = 0; s < 5; ++s) {
        sizes.push_back(static_cast<std::size_t>(kChannels[s]) * kChannels[s + 1] * kKernel * kKernel);
        sizes.push_back(static_cast<std::size_t>(kChannels[s + 1]));
    }
    auto blocks = read_weights_file(path, header, sizes);
    LayoutGenerator g;
    g.image_dim_ = d;
    g.input_width_ = iw;
    g.seed_ = header.seed;
    g.expander_ = Matrix(iw - d, d);
    g.expander_.a = std::move(blocks[0]);
    g.fc1_ = Matrix(kEncHidden, iw);
    g.fc1_.a = std::move(blocks[1]);
    g.fc1_b_ = std::move(blocks[2]);
    g.fc2_ = Matrix(kEncOut, kEncHidden);
    g.fc2_.a = std::move(blocks[3]);
    g.fc2_b_ = std::move(blocks[4]);
    g.stages_.resize(5);
    for (int s = 0; s < 5; ++s) {
        auto& st = g.stages_[s];
        st.in_ch = kChannels[s];
        st.out_ch = kChannels[s + 1];
        st.w = std::move(blocks[5 + 2 * s]);
        st.b = std::move(blocks[6 + 2 * s]);
    }
    return g;
}

}  // namespace trap
