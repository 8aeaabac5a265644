// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "trap/embedding.hpp"
#include "trap/harness.hpp"
#include "trap/image.hpp"

namespace trap {

struct PerturbationBudget {
    double epsilon = 8.0 / 255.0;  // max-norm bound in pixel units
    int query_budget = 1000;
    double step_size = 0.01;
    double spsa_c = 0.01;      // two-sided perturbation scale
    int samples_per_step = 8;  // SPSA gradient estimates averaged per step

    void validate() const;
};

/// Score queries against the attacked system. Every call through
/// operator() is counted; attacks never exceed the query budget.
class ScoringOracle {
public:
    enum class Mode { surrogate, agent_frequency };

    ScoringOracle(Mode mode, std::function<double(const ImageTensor&)> fn);

    double operator()(const ImageTensor& image);
    int queries_used() const { return queries_; }
    Mode mode() const { return mode_; }

    /// Deterministic surrogate score: cosine similarity between the image
    /// embedding and the prompt embedding. The default oracle; one agent
    /// query per oracle call would otherwise cost R' trials.
    static ScoringOracle surrogate(const Embedder& embedder, Embedding prompt_embedding);

    /// Empirical selection frequency over `trials` randomized n-way trials.
    static ScoringOracle agent_frequency(AgentAdapter& agent, std::vector<ImageTensor> competitors, int trials, int n,
                                         std::uint64_t seed, TrialOptions options = {});

private:
    Mode mode_;
    std::function<double(const ImageTensor&)> fn_;
    int queries_ = 0;
};

struct BaselineResult {
    ImageTensor x_adv;
    int queries_used = 0;
    bool completed = true;  // false when the oracle failed mid-run
    std::string diagnostic;
};

/// Simultaneous-perturbation stochastic approximation: two-sided gradient
/// estimates along Rademacher directions, averaged over samples_per_step,
/// ascending the oracle score. Every iterate is projected onto the
/// epsilon ball around x_target and clamped to [0, 1].
BaselineResult spsa_attack(const ImageTensor& x_target, ScoringOracle& oracle, const PerturbationBudget& budget,
                           std::uint64_t seed);

/// Bandit attack with a time-dependent gradient prior: two-point oracle
/// queries around prior-perturbed directions feed an exponentiated update
/// of the prior; the image steps along sign(prior). Same projection
/// contract as SPSA.
BaselineResult bandit_attack(const ImageTensor& x_target, ScoringOracle& oracle, const PerturbationBudget& budget,
                             std::uint64_t seed);

}  // namespace trap
