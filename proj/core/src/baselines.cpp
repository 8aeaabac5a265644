// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "trap/error.hpp"
#include "trap/rng.hpp"

namespace trap {

void PerturbationBudget::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error("budget: epsilon must be in (0,1)");
    if (query_budget < 0) throw Error("budget: query budget must be >= 0");
    if (!(step_size > 0.0)) throw Error("budget: step size must be > 0");
    if (!(spsa_c > 0.0)) throw Error("budget: perturbation scale must be > 0");
    if (samples_per_step < 1) throw Error("budget: samples per step must be >= 1");
}

ScoringOracle::ScoringOracle(Mode mode, std::function<double(const ImageTensor&)> fn)
    : mode_(mode), fn_(std::move(fn)) {
    if (!fn_) throw Error("oracle: empty score function");
}

double ScoringOracle::operator()(const ImageTensor& image) {
    ++queries_;
    return fn_(image);
}

ScoringOracle ScoringOracle::surrogate(const Embedder& embedder, Embedding prompt_embedding) {
    return ScoringOracle(Mode::surrogate, [&embedder, prompt = std::move(prompt_embedding)](const ImageTensor& img) {
        const Embedding e = embedder.embed_image(img);
        return norm(e.values) == 0.0 ? -2.0 : cosine(e, prompt);
    });
}

ScoringOracle ScoringOracle::agent_frequency(AgentAdapter& agent, std::vector<ImageTensor> competitors, int trials,
                                             int n, std::uint64_t seed, TrialOptions options) {
    return ScoringOracle(Mode::agent_frequency,
                         [&agent, competitors = std::move(competitors), trials, n, seed,
                          options = std::move(options)](const ImageTensor& img) mutable {
                             const SelectionEstimate est =
                                 run_trials(img, competitors, agent, trials, n, seed, options);
                             if (!est.valid) throw AdapterError("agent-frequency oracle: partial estimate");
                             return est.p_adv;
                         });
}

namespace {

// Project onto the epsilon ball around the original and clamp to [0,1].
void project(ImageTensor& x, const ImageTensor& origin, double epsilon) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double lo = std::max(origin.data[i] - epsilon, 0.0);
        const double hi = std::min(origin.data[i] + epsilon, 1.0);
        x.data[i] = std::clamp(x.data[i], lo, hi);
    }
}

ImageTensor probe_point(const ImageTensor& x, const Vec& direction, double scale) {
    ImageTensor p = x;
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = std::clamp(p.data[i] + scale * direction[i], 0.0, 1.0);
    return p;
}

}  // namespace

BaselineResult spsa_attack(const ImageTensor& x_target, ScoringOracle& oracle, const PerturbationBudget& budget,
                           std::uint64_t seed) {
    budget.validate();
    x_target.validate();
    Rng rng(mix_seed(seed, "spsa"));
    BaselineResult result;
    result.x_adv = x_target;
    const std::size_t dim = x_target.data.size();
    Vec delta(dim);
    Vec ghat(dim);
    const int queries_per_step = 2 * budget.samples_per_step;
    try {
        while (oracle.queries_used() + queries_per_step <= budget.query_budget) {
            std::fill(ghat.begin(), ghat.end(), 0.0);
            for (int s = 0; s < budget.samples_per_step; ++s) {
                for (auto& d : delta) d = rng.rademacher();
                const double y_plus = oracle(probe_point(result.x_adv, delta, budget.spsa_c));
                const double y_minus = oracle(probe_point(result.x_adv, delta, -budget.spsa_c));
                const double scale = (y_plus - y_minus) / (2.0 * budget.spsa_c);
                // 1/delta_i == delta_i for Rademacher entries
                for (std::size_t i = 0; i < dim; ++i) ghat[i] += scale * delta[i];
            }
            const double inv = 1.0 / budget.samples_per_step;
            for (std::size_t i = 0; i < dim; ++i) result.x_adv.data[i] += budget.step_size * inv * ghat[i];
            project(result.x_adv, x_target, budget.epsilon);
        }
    } catch (const std::exception& e) {
        result.completed = false;
        result.diagnostic = e.what();
    }
    result.queries_used = oracle.queries_used();
    return result;
}

namespace {

// The gradient prior lives on a coarse tile grid (the data-dependent part
// of the prior); exploration and updates happen in tile space and are
// replicated onto pixels.
constexpr int kBanditTile = 4;
constexpr double kBanditExploration = 1.0;
constexpr double kBanditFd = 0.1;
constexpr double kBanditPriorLr = 1.0;

struct TileGrid {
    int rows, cols, height, width;
    std::size_t dim() const { return static_cast<std::size_t>(rows) * cols * ImageTensor::channels; }

    Vec upsample(const Vec& tile) const {
        Vec out(static_cast<std::size_t>(height) * width * ImageTensor::channels);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const std::size_t t =
                    (static_cast<std::size_t>(y / kBanditTile) * cols + x / kBanditTile) * ImageTensor::channels;
                const std::size_t p = (static_cast<std::size_t>(y) * width + x) * ImageTensor::channels;
                for (int c = 0; c < ImageTensor::channels; ++c) out[p + c] = tile[t + c];
            }
        return out;
    }
};

}  // namespace

BaselineResult bandit_attack(const ImageTensor& x_target, ScoringOracle& oracle, const PerturbationBudget& budget,
                             std::uint64_t seed) {
    budget.validate();
    x_target.validate();
    Rng rng(mix_seed(seed, "bandit"));
    BaselineResult result;
    result.x_adv = x_target;

    const TileGrid grid{(x_target.height + kBanditTile - 1) / kBanditTile,
                        (x_target.width + kBanditTile - 1) / kBanditTile, x_target.height, x_target.width};
    const std::size_t tdim = grid.dim();
    const double noise_scale = kBanditExploration / std::sqrt(static_cast<double>(tdim));

    Vec prior(tdim, 0.0);
    Vec estimate(tdim);
    Vec noise(tdim);
    Vec q(tdim);
    ImageTensor x = x_target;
    double best_score = 0.0;
    bool have_best = false;
    // One scored query per step tracks the best iterate; the prior
    // trajectory itself is not monotone.
    const int queries_per_step = 2 * budget.samples_per_step + 1;
    try {
        while (oracle.queries_used() + queries_per_step <= budget.query_budget) {
            std::fill(estimate.begin(), estimate.end(), 0.0);
            for (int s = 0; s < budget.samples_per_step; ++s) {
                for (auto& v : noise) v = rng.normal() * noise_scale;
                auto probe = [&](double sign) {
                    for (std::size_t i = 0; i < tdim; ++i) q[i] = prior[i] + sign * noise[i];
                    Vec direction = grid.upsample(q);
                    const double n = norm(direction);
                    if (n > 0.0)
                        for (auto& v : direction) v /= n;
                    return oracle(probe_point(x, direction, kBanditFd));
                };
                const double y_plus = probe(1.0);
                const double y_minus = probe(-1.0);
                const double scale = (y_plus - y_minus) / (kBanditFd * kBanditExploration);
                for (std::size_t i = 0; i < tdim; ++i) estimate[i] += scale * noise[i];
            }
            const double inv = 1.0 / budget.samples_per_step;

            // Exponentiated gradient step keeps each prior entry in (-1, 1).
            for (std::size_t i = 0; i < tdim; ++i) {
                const double g = estimate[i] * inv;
                const double pos = (prior[i] + 1.0) / 2.0;
                const double ep = pos * std::exp(kBanditPriorLr * g);
                const double en = (1.0 - pos) * std::exp(-kBanditPriorLr * g);
                prior[i] = 2.0 * ep / (ep + en) - 1.0;
            }
            const Vec step_dir = grid.upsample(prior);
            for (std::size_t i = 0; i < x.data.size(); ++i)
                x.data[i] += budget.step_size * (step_dir[i] > 0.0 ? 1.0 : (step_dir[i] < 0.0 ? -1.0 : 0.0));
            project(x, x_target, budget.epsilon);

            const double score = oracle(x);
            if (!have_best || score > best_score) {
                best_score = score;
                have_best = true;
                result.x_adv = x;
            }
        }
    } catch (const std::exception& e) {
        result.completed = false;
        result.diagnostic = e.what();
    }
    result.queries_used = oracle.queries_used();
    return result;
}

}  // namespace trap
