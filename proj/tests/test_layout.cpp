// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>

#include "test_support.hpp"
#include "trap/error.hpp"
#include "trap/layout.hpp"

using namespace trap;

namespace {

Embedding emb(Vec v) { return {std::move(v), "test"}; }

LayoutMask hand_mask(int h, int w, Vec values) {
    LayoutMask m(h, w);
    m.values = std::move(values);
    return m;
}

}  // namespace

TEST_CASE("mask mean identities") {
    CHECK(mask_mean(LayoutMask(3, 3, 1.0)) == doctest::Approx(1.0));
    CHECK(mask_mean(LayoutMask(3, 3, 0.0)) == doctest::Approx(0.0));
    CHECK(mask_mean(hand_mask(2, 2, {0.0, 0.5, 0.5, 1.0})) == doctest::Approx(0.5));
}

TEST_CASE("refinement is elementwise multiplication") {
    const LayoutMask a(4, 4, 0.5);
    CHECK(mask_mean(refine_with_segmentation(a, LayoutMask(4, 4, 1.0))) == doctest::Approx(0.5));
    CHECK(mask_mean(refine_with_segmentation(a, LayoutMask(4, 4, 0.0))) == doctest::Approx(0.0));

    LayoutMask half(4, 4, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 2; ++x) half.at(y, x) = 1.0;
    const LayoutMask refined = refine_with_segmentation(a, half);
    CHECK(refined.at(0, 0) == doctest::Approx(0.5));
    CHECK(refined.at(0, 3) == doctest::Approx(0.0));
    CHECK(mask_mean(refined) == doctest::Approx(0.25));

    CHECK_THROWS_AS(refine_with_segmentation(a, LayoutMask(3, 4, 1.0)), ShapeMismatchError);
}

TEST_CASE("refinement never raises the mean") {
    Rng rng(44);
    for (int i = 0; i < 20; ++i) {
        LayoutMask a(6, 6);
        LayoutMask fg(6, 6);
        for (auto& v : a.values) v = rng.uniform();
        for (auto& v : fg.values) v = rng.uniform();
        CHECK(mask_mean(refine_with_segmentation(a, fg)) <= mask_mean(a) + 1e-12);
    }
}

TEST_CASE("generated masks stay in range even for huge inputs") {
    const LayoutGenerator gen(16, 33);
    for (int i = 0; i < 5; ++i) {
        const Embedding text = emb(testing::random_vec(16, 600 + i));
        const Embedding image = emb(testing::random_vec(16, 700 + i));
        const LayoutMask mask = gen.generate(text, image, 48, 48);
        mask.validate();

        const Embedding big_text = emb(scaled(text.values, 1e3));
        const Embedding big_image = emb(scaled(image.values, 1e3));
        const LayoutMask big = gen.generate(big_text, big_image, 48, 48);
        big.validate();  // sigmoid saturates, never overflows
    }
}

TEST_CASE("generation is deterministic") {
    const LayoutGenerator gen(16, 33);
    const Embedding text = emb(testing::random_vec(16, 61));
    const Embedding image = emb(testing::random_vec(16, 62));
    const LayoutMask a = gen.generate(text, image, 40, 40);
    const LayoutMask b = gen.generate(text, image, 40, 40);
    CHECK(a.values == b.values);
}

TEST_CASE("zero weights give the constant sigmoid(0) mask") {
    const LayoutGenerator gen(8, 0, 0, LayoutGenerator::Init::zero);
    const LayoutMask mask = gen.generate(emb(testing::random_vec(8, 1)), emb(testing::random_vec(8, 2)), 32, 32);
    for (double v : mask.values) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("resize keeps values inside the raw mask range") {
    const LayoutGenerator gen(12, 5);
    const Embedding text = emb(testing::random_vec(12, 81));
    const Embedding image = emb(testing::random_vec(12, 82));
    const LayoutMask raw = gen.generate_raw(text, image);
    const auto [raw_min, raw_max] = std::minmax_element(raw.values.begin(), raw.values.end());
    const LayoutMask resized = gen.generate(text, image, 200, 120);
    for (double v : resized.values) {
        CHECK(v >= *raw_min - 1e-12);
        CHECK(v <= *raw_max + 1e-12);
    }
}

TEST_CASE("input width contract") {
    const LayoutGenerator gen(16, 9);  // declared width 48
    CHECK(gen.input_width() == 48);
    const Embedding image = emb(testing::random_vec(16, 3));
    // direct concat when text fills the slot exactly
    const Embedding wide_text = emb(testing::random_vec(32, 4));
    CHECK_NOTHROW(gen.generate(wide_text, image, 16, 16));
    // same-width text goes through the seeded expander
    const Embedding text = emb(testing::random_vec(16, 5));
    CHECK_NOTHROW(gen.generate(text, image, 16, 16));
    // anything else cannot fill the declared width
    CHECK_THROWS_AS(gen.generate(emb(testing::random_vec(20, 6)), image, 16, 16), ShapeMismatchError);
    CHECK_THROWS_AS(gen.generate(text, emb(testing::random_vec(20, 7)), 16, 16), ShapeMismatchError);
}

TEST_CASE("layout weights serialization round trip") {
    testing::TempDir dir("layout_io");
    const LayoutGenerator gen(12, 91);
    gen.save(dir.str() + "/layout.bin");
    const LayoutGenerator back = LayoutGenerator::load(dir.str() + "/layout.bin");
    const Embedding text = emb(testing::random_vec(12, 11));
    const Embedding image = emb(testing::random_vec(12, 12));
    const LayoutMask a = gen.generate(text, image, 32, 32);
    const LayoutMask b = back.generate(text, image, 32, 32);
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-4));
}

TEST_CASE("segmenters produce valid foreground masks") {
    const ImageTensor img = testing::random_image(20, 30, 17);
    const CenterBoxSegmenter box(0.5);
    const LayoutMask fg = box.foreground(img);
    fg.validate();
    CHECK(fg.at(10, 15) == doctest::Approx(1.0));
    CHECK(fg.at(0, 0) == doctest::Approx(0.0));
    CHECK(mask_mean(fg) == doctest::Approx(0.25).epsilon(0.05));

    ImageTensor two_tone(16, 16, 0.1);
    for (int y = 6; y < 10; ++y)
        for (int x = 6; x < 10; ++x)
            for (int c = 0; c < 3; ++c) two_tone.at(y, x, c) = 0.9;
    const OtsuSegmenter otsu;
    const LayoutMask ofg = otsu.foreground(two_tone);
    ofg.validate();
    CHECK(ofg.at(8, 8) == doctest::Approx(1.0));  // the small bright square is the object
    CHECK(ofg.at(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("mask PNG export") {
    testing::TempDir dir("mask_png");
    LayoutMask m(4, 4, 0.5);
    CHECK_NOTHROW(save_mask_png(dir.str() + "/m.png", m));
}
