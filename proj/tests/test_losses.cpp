// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "test_support.hpp"
#include "trap/error.hpp"
#include "trap/losses.hpp"

using namespace trap;

namespace {

Embedding emb(Vec v) { return {std::move(v), "test"}; }

Decomposition dec_with_distinctive(Vec d) {
    Decomposition dec;
    dec.common = emb(Vec(d.size(), 0.0));
    dec.distinctive = emb(std::move(d));
    return dec;
}

// Independent evaluation of the offline perceptual pipeline: identity band
// plus 3x3 Laplacian band (zero padding), 0.5 weight each, per channel MSE.
double reference_filter_bank_distance(const ImageTensor& a, const ImageTensor& b) {
    const int h = a.height, w = a.width;
    double id_sum = 0.0, lap_sum = 0.0;
    auto lap = [&](const ImageTensor& img, int y, int x, int c) {
        auto px = [&](int yy, int xx) {
            return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : img.at(yy, xx, c);
        };
        return 4.0 * px(y, x) - px(y - 1, x) - px(y + 1, x) - px(y, x - 1) - px(y, x + 1);
    };
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                id_sum += d * d;
                const double ld = lap(a, y, x, c) - lap(b, y, x, c);
                lap_sum += ld * ld;
            }
    const double denom = static_cast<double>(h) * w * 3;
    return 0.5 * id_sum / denom + 0.5 * lap_sum / denom;
}

}  // namespace

TEST_CASE("perceptual distance identities") {
    const FilterBankMetric metric;
    const ImageTensor x = testing::random_image(8, 8, 3);
    CHECK(lpips_loss(x, x, metric) == doctest::Approx(0.0));
    const ImageTensor y = testing::random_image(8, 8, 4);
    CHECK(lpips_loss(x, y, metric) == doctest::Approx(lpips_loss(y, x, metric)).epsilon(1e-12));
    CHECK(lpips_loss(x, y, metric) > 0.0);
    CHECK_THROWS_AS(lpips_loss(x, testing::random_image(8, 9, 5), metric), ShapeMismatchError);
}

TEST_CASE("perceptual distance of the all-black vs all-white pair") {
    const FilterBankMetric metric;
    const ImageTensor black(8, 8, 0.0);
    const ImageTensor white(8, 8, 1.0);
    const double got = lpips_loss(black, white, metric);
    // Independent oracle run, then pinned: identity band contributes 1.0,
    // the Laplacian band 4*2^2 + 24*1^2 = 40 over 64 pixels = 0.625;
    // equally weighted: 0.8125.
    CHECK(got == doctest::Approx(reference_filter_bank_distance(black, white)).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.8125).epsilon(1e-12));
}

TEST_CASE("perceptual distance matches the independent pipeline on random pairs") {
    const FilterBankMetric metric;
    for (int i = 0; i < 10; ++i) {
        const ImageTensor a = testing::random_image(7, 9, 900 + i);
        const ImageTensor b = testing::random_image(7, 9, 950 + i);
        CHECK(metric.distance(a, b) == doctest::Approx(reference_filter_bank_distance(a, b)).epsilon(1e-10));
    }
}

TEST_CASE("perceptual gradient matches finite differences") {
    const FilterBankMetric metric;
    const ImageTensor ref = testing::random_image(6, 6, 21);
    ImageTensor x = testing::random_image(6, 6, 22);
    const Vec g = metric.gradient(x, ref);
    auto f = [&](const Vec& data) {
        ImageTensor probe = x;
        probe.data = data;
        return metric.distance(probe, ref);
    };
    Rng rng(77);
    for (int k = 0; k < 24; ++k) {
        const std::size_t i = rng.uniform_index(x.data.size());
        const double fd = testing::central_diff(f, x.data, i);
        CHECK(testing::rel_error(g[i], fd) <= 1e-6);
    }
}

TEST_CASE("semantic loss identities") {
    CHECK(semantic_loss(emb({2.0, 0.0}), emb({1.0, 0.0})) == doctest::Approx(0.0));
    CHECK(semantic_loss(emb({1.0, 0.0}), emb({0.0, 3.0})) == doctest::Approx(1.0));
    CHECK(semantic_loss(emb({1.0, 0.0}), emb({-4.0, 0.0})) == doctest::Approx(2.0));
    CHECK_THROWS_AS(semantic_loss(emb({0.0, 0.0}), emb({1.0, 0.0})), Error);
}

TEST_CASE("semantic loss is scale invariant") {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        const Embedding a = emb(testing::random_vec(12, 400 + i));
        const Embedding b = emb(testing::random_vec(12, 460 + i));
        const double base = semantic_loss(a, b);
        CHECK(std::abs(semantic_loss(emb(scaled(a.values, rng.uniform(0.01, 50.0))), b) - base) <= 1e-9);
        CHECK(std::abs(semantic_loss(a, emb(scaled(b.values, rng.uniform(0.01, 50.0)))) - base) <= 1e-9);
    }
}

TEST_CASE("distinctive loss identities") {
    const auto a = dec_with_distinctive({1.0, 0.0});
    CHECK(dist_loss(a, a) == doctest::Approx(0.0));
    CHECK(dist_loss(a, dec_with_distinctive({-1.0, 0.0})) == doctest::Approx(4.0));
    CHECK(dist_loss(dec_with_distinctive({0.3, 0.4}), dec_with_distinctive({0.0, 0.0})) == doctest::Approx(0.25));
    CHECK_THROWS_AS(dist_loss(a, dec_with_distinctive({1.0, 0.0, 0.0})), ShapeMismatchError);
}

TEST_CASE("semantic gradient matches finite differences") {
    for (int i = 0; i < 25; ++i) {
        Rng rng(800 + i);
        Vec v = testing::random_vec(10, 810 + i);
        const double target_norm = rng.uniform(0.5, 2.0);
        const double n = norm(v);
        for (auto& x : v) x *= target_norm / n;
        const Embedding e = emb(v);
        const Embedding t = emb(testing::random_vec(10, 860 + i));
        const Vec g = semantic_loss_gradient(e, t);
        auto f = [&](const Vec& x) { return semantic_loss(emb(x), t); };
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double fd = testing::central_diff(f, e.values, k);
            CHECK(std::abs(g[k] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("total loss assembles the weighted sum") {
    const FilterBankMetric metric;
    const GradientRoute route;  // gradient-only members absent

    SUBCASE("semantic term only") {
        LossWeights w{0.0, 1.0, 0.0};
        const auto bd = total_loss(emb({1.0, 0.0}), emb({0.0, 1.0}), ImageTensor(4, 4, 0.5), ImageTensor(4, 4, 0.5),
                                   dec_with_distinctive({0.0}), dec_with_distinctive({0.0}), w, metric, route);
        CHECK(bd.total == doctest::Approx(1.0));
        CHECK(bd.sem == doctest::Approx(1.0));
    }
    SUBCASE("distinctive term only, identical decompositions") {
        LossWeights w{0.0, 0.0, 1.0};
        const auto d = dec_with_distinctive({0.4, -0.2});
        const auto bd = total_loss(emb({1.0, 0.0}), emb({1.0, 0.0}), ImageTensor(4, 4, 0.3), ImageTensor(4, 4, 0.3),
                                   d, d, w, metric, route);
        CHECK(bd.total == doctest::Approx(0.0));
    }
    SUBCASE("weighted sum invariant and lambda linearity") {
        for (int i = 0; i < 10; ++i) {
            const ImageTensor xc = testing::random_image(6, 6, 70 + i);
            const ImageTensor xt = testing::random_image(6, 6, 80 + i);
            const Embedding ea = emb(testing::random_vec(8, 90 + i));
            const Embedding et = emb(testing::random_vec(8, 95 + i));
            const auto da = dec_with_distinctive(testing::random_vec(6, 85 + i));
            const auto dt = dec_with_distinctive(testing::random_vec(6, 87 + i));
            LossWeights w{0.7, 1.3, 0.4};
            const auto bd = total_loss(ea, et, xc, xt, da, dt, w, metric, route);
            // components computed independently through the public single-term entry points
            const double expected = w.lambda1 * lpips_loss(xc, xt, metric) + w.lambda2 * semantic_loss(ea, et) +
                                    w.lambda3 * dist_loss(da, dt);
            CHECK(std::abs(bd.total - expected) <= 1e-9);

            LossWeights w2 = w;
            w2.lambda2 *= 2.0;
            const auto bd2 = total_loss(ea, et, xc, xt, da, dt, w2, metric, route);
            CHECK(bd2.total - bd.total == doctest::Approx(w.lambda2 * bd.sem).epsilon(1e-12));
        }
    }
}

TEST_CASE("loss weights validation") {
    CHECK_THROWS_AS((LossWeights{0.0, 0.0, 0.0}).validate(), Error);
    CHECK_THROWS_AS((LossWeights{-1.0, 1.0, 0.0}).validate(), Error);
    CHECK_NOTHROW((LossWeights{0.0, 1.0, 0.0}).validate());
}
