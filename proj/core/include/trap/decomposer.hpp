// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trap/embedding.hpp"
#include "trap/linalg.hpp"

namespace trap {

enum class DecomposerMode : std::uint32_t { analytic = 0, learned = 1 };

/// Output of the Siamese decomposer: a prompt-aligned common branch and a
/// prompt-orthogonal distinctive branch, both of the configured branch width.
struct Decomposition {
    Embedding common;
    Embedding distinctive;
};

struct TrainOptions {
    int epochs = 50;
    double learning_rate = 1e-3;
};

struct TrainStats {
    std::vector<double> epoch_loss;  // entry 0 is the pre-training loss
    std::vector<double> epoch_distinctive_norm;
};

/// Siamese semantic decomposer. Two modes behind one interface:
///
///  - analytic: common = lift((e.u)u), distinctive = lift(e - (e.u)u) where
///    u is the unit conditioning-prompt embedding and lift is a fixed seeded
///    map with orthonormal columns, so pullback(lift(x)) == x exactly. The
///    default: every downstream identity is exactly testable.
///  - learned: per branch, affine(d->h) -> frozen-statistics normalization
///    -> ReLU -> affine(h->h), trained by train_decomposer().
///
/// Instances are immutable after construction / training; decompose() is
/// pure and safe to call concurrently.
class SemanticDecomposer {
public:
    static SemanticDecomposer analytic(const Embedding& prompt, int branch_dim, std::uint64_t lift_seed);
    static SemanticDecomposer learned_init(int input_dim, int branch_dim, std::uint64_t seed);

    Decomposition decompose(const Embedding& e) const;

    /// Left inverse of the lift map: pullback(lift(x)) == x.
    Vec pullback(const Vec& branch_values) const;
    Vec pullback(const Embedding& branch) const { return pullback(branch.values); }

    /// Jacobian-transpose product: given cotangents for the two branches,
    /// returns the gradient contribution with respect to the input embedding.
    /// Either cotangent may be empty (treated as zero).
    Vec vjp(const Embedding& e, const Vec& v_common, const Vec& v_distinctive) const;

    DecomposerMode mode() const { return mode_; }
    int input_dim() const { return input_dim_; }
    int branch_dim() const { return branch_dim_; }
    std::uint64_t seed() const { return seed_; }
    const Matrix& lift() const { return lift_; }
    const Vec& prompt_direction() const { return prompt_unit_; }

    void save(const std::string& path) const;
    static SemanticDecomposer load(const std::string& path);

    /// Full-batch gradient descent with backtracking on the corpus of
    /// (image embedding, prompt embedding) pairs. Normalization statistics
    /// are computed from the corpus before the first epoch and frozen.
    TrainStats train(const std::vector<std::pair<Embedding, Embedding>>& corpus, const TrainOptions& options);

    /// Shared lift map used by both modes (orthonormal columns, h x d).
    static Matrix lift_matrix(int branch_dim, int input_dim, std::uint64_t seed);

private:
    SemanticDecomposer() = default;

    struct Branch {
        Matrix w1;  // h x d
        Vec b1;     // h
        Vec mu;     // h  (frozen normalization statistics)
        Vec var;    // h
        Matrix w2;  // h x h
        Vec b2;     // h

        Vec forward(const Vec& e) const;
        // Backprop helpers used by train() and vjp().
        Vec input_grad(const Vec& e, const Vec& v_out) const;
    };

    double corpus_loss(const std::vector<std::pair<Embedding, Embedding>>& corpus) const;

    DecomposerMode mode_ = DecomposerMode::analytic;
    int input_dim_ = 0;
    int branch_dim_ = 0;
    std::uint64_t seed_ = 0;

    Matrix lift_;      // h x d, orthonormal columns
    Vec prompt_unit_;  // analytic mode only (d)
    Vec lift_prompt_;  // lift * prompt_unit, cached (h)

    Branch common_;
    Branch distinctive_;

    static constexpr double kNormEps = 1e-5;

    friend struct DecomposerTrainer;
};

/// Builds a learned-mode decomposer seeded with `seed` and fits it to the
/// corpus. Loss per pair: -cos(pullback(common), prompt)
/// + |cos(pullback(distinctive), prompt)| + ||pullback(common) +
/// pullback(distinctive) - e||^2, averaged over the corpus.
SemanticDecomposer train_decomposer(const std::vector<std::pair<Embedding, Embedding>>& corpus, int epochs,
                                    std::uint64_t seed, TrainStats* stats = nullptr,
                                    double learning_rate = 1e-3, int branch_dim = 0);

}  // namespace trap
