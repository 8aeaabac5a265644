// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trap/decoder.hpp"
#include "trap/decomposer.hpp"
#include "trap/harness.hpp"
#include "trap/layout.hpp"
#include "trap/losses.hpp"

namespace trap {

struct TrapConfig {
    LossWeights loss_weights;
    int outer_iterations = 20;  // M
    int inner_steps = 20;       // T
    double learning_rate = 0.005;
    int candidate_count = 4;  // n
    int trials_per_eval = 100;  // R
    double threshold = 0.25;    // 1/n for the default n
    std::vector<double> strength_grid = {0.5};  // within [0.3, 0.8]
    std::vector<double> cfg_grid = {7.5};       // within [2.0, 12.0]
    std::uint64_t seed = 0;

    // Candidates whose perceptual distance to the target exceeds this bound
    // are rejected from best-so-far when the decoder is not differentiable.
    double lpips_accept_bound = 0.45;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

struct AdamState {
    Vec m, v;
    int t = 0;
    void reset(std::size_t dim);
};

enum class AttackStatus { threshold_reached, budget_exhausted, aborted };

struct EvalRecord {
    int iteration = 0;
    SelectionEstimate estimate;
    double lpips_to_target = 0.0;
    bool accepted = true;
};

struct AttackResult {
    ImageTensor x_adv;
    double best_score = 0.0;
    int iterations_used = 0;
    std::vector<LossBreakdown> loss_trace;  // per inner step
    std::vector<EvalRecord> eval_trace;     // per outer iteration
    DecoderSettings settings_chosen;
    AttackStatus status = AttackStatus::budget_exhausted;
    std::string diagnostic;
};

/// Backend wiring for one attack. Non-owning; all members must outlive the
/// call. One optimizer invocation owns its mutable state, so different
/// instances can run concurrently against the same stack.
struct AttackStack {
    const Embedder* embedder = nullptr;
    std::function<SemanticDecomposer(const Embedding& prompt)> make_decomposer;
    const LayoutGenerator* layout = nullptr;
    const Segmenter* segmenter = nullptr;
    const PerceptualMetric* metric = nullptr;
    const DiffusionDecoder* decoder = nullptr;
    AgentAdapter* agent = nullptr;
    TrialOptions trial_options;
    /// Optional sink for intermediate decoded candidates (m, t, image).
    std::function<void(int, int, const ImageTensor&)> candidate_sink;

    void validate() const;
};

/// e_mod = e_com scaled by mean(A).
Embedding fuse_embedding(const Decomposition& dec, const LayoutMask& mask);

/// State for one inner optimization window (fixed outer iteration).
struct InnerLoopContext {
    const Embedding* e_text = nullptr;
    const ImageTensor* x_target = nullptr;
    const Decomposition* dec_target = nullptr;
    const SemanticDecomposer* decomposer = nullptr;
    const DiffusionDecoder* decoder = nullptr;
    const PerceptualMetric* metric = nullptr;
    double fusion_scale = 1.0;
    DecoderSettings settings;
    LossWeights weights;
    double learning_rate = 0.005;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
    AdamState adam;
    int iteration = 0;
    int step = 0;                            // incremented by inner_step
    std::vector<LossBreakdown>* trace = nullptr;
    ImageTensor* last_candidate = nullptr;   // decoded candidate of the step
};

/// One adaptive-moment gradient-descent update of e_adv: decompose, fuse,
/// decode, evaluate the composite loss, then step. Returns the updated
/// embedding; the decoded candidate lands in ctx.last_candidate and the
/// LossBreakdown is appended to ctx.trace.
Embedding inner_step(const Embedding& e_adv, InnerLoopContext& ctx);

struct GridProbe {
    double strength = 0.0;
    double cfg = 0.0;
    double score = 0.0;
};

/// Probe-score maximization with the declared tie-break: proximity to the
/// initial operating point (0.5, 7.5) under range-normalized Euclidean
/// distance, then lower strength, then lower cfg. Returns the probe index.
int select_grid_cell(const std::vector<GridProbe>& probes);

/// One-iteration probe of every (strength, cfg) grid cell; returns the
/// settings maximizing the estimated selection probability. Runs once
/// before outer iteration 1. Single-cell grids return immediately.
DecoderSettings grid_search(const ImageTensor& x_target, const std::string& prompt,
                            const std::vector<ImageTensor>& competitors, const AttackStack& stack,
                            const TrapConfig& config);

/// The full outer/inner optimization loop producing the adversarial image.
AttackResult optimize_instance(const ImageTensor& x_target, const std::string& prompt,
                               const std::vector<ImageTensor>& competitors, const AttackStack& stack,
                               const TrapConfig& config);

/// Baseline: single decode of the target's common branch fused at
/// mask mean 1, no optimization steps.
ImageTensor unoptimized_diffusion(const ImageTensor& x_target, const std::string& prompt,
                                  const DecoderSettings& settings, const AttackStack& stack);

}  // namespace trap
