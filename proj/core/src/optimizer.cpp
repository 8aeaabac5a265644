// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "trap/error.hpp"

namespace trap {

void TrapConfig::validate() const {
    loss_weights.validate();
    if (outer_iterations < 1 || inner_steps < 0) throw Error("trap config: need M >= 1 and T >= 0");
    if (candidate_count < 2) throw Error("trap config: n must be >= 2");
    if (trials_per_eval < 1) throw Error("trap config: R must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("trap config: learning rate must be > 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error("trap config: threshold must be in (0,1)");
    if (strength_grid.empty() || cfg_grid.empty()) throw Error("trap config: grids must be non-empty");
    for (double s : strength_grid)
        if (!(s >= 0.3 && s <= 0.8)) throw Error("trap config: strength grid outside [0.3, 0.8]");
    for (double c : cfg_grid)
        if (!(c >= 2.0 && c <= 12.0)) throw Error("trap config: cfg grid outside [2.0, 12.0]");
}

void AdamState::reset(std::size_t dim) {
    m.assign(dim, 0.0);
    v.assign(dim, 0.0);
    t = 0;
}

void AttackStack::validate() const {
    if (!embedder || !make_decomposer || !layout || !segmenter || !metric || !decoder || !agent)
        throw Error("attack stack: incomplete wiring");
}

Embedding fuse_embedding(const Decomposition& dec, const LayoutMask& mask) {
    Embedding out;
    out.values = scaled(dec.common.values, mask_mean(mask));
    out.space_id = dec.common.space_id;
    return out;
}

Embedding inner_step(const Embedding& e_adv, InnerLoopContext& ctx) {
    ctx.step += 1;
    const Decomposition dec_adv = ctx.decomposer->decompose(e_adv);
    Embedding e_mod;
    e_mod.values = scaled(dec_adv.common.values, ctx.fusion_scale);
    e_mod.space_id = dec_adv.common.space_id;
    const ImageTensor x_cand = ctx.decoder->decode(e_mod, *ctx.e_text, *ctx.x_target, ctx.settings);

    GradientRoute route;
    route.decomposer = ctx.decomposer;
    route.fusion_scale = ctx.fusion_scale;
    route.decoder = ctx.decoder;
    route.x_init = ctx.x_target;
    route.settings = ctx.settings;
    LossBreakdown bd = total_loss(e_adv, *ctx.e_text, x_cand, *ctx.x_target, dec_adv, *ctx.dec_target, ctx.weights,
                                  *ctx.metric, route);
    bd.iteration = ctx.iteration;
    bd.step = ctx.step;

    // Adaptive-moment update (bias-corrected first/second moments).
    AdamState& st = ctx.adam;
    if (st.m.size() != e_adv.values.size()) st.reset(e_adv.values.size());
    st.t += 1;
    Embedding out = e_adv;
    const double b1 = ctx.adam_beta1, b2 = ctx.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, st.t);
    const double bc2 = 1.0 - std::pow(b2, st.t);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double g = bd.gradient[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        out.values[i] -= ctx.learning_rate * mhat / (std::sqrt(vhat) + ctx.adam_epsilon);
    }

    if (ctx.trace) ctx.trace->push_back(bd);
    if (ctx.last_candidate) *ctx.last_candidate = x_cand;
    return out;
}

int select_grid_cell(const std::vector<GridProbe>& probes) {
    if (probes.empty()) throw Error("select_grid_cell: no probes");
    // Range-normalized distance to the initial operating point (0.5, 7.5);
    // the ranges are the declared grid bounds [0.3, 0.8] and [2.0, 12.0].
    auto proximity = [](const GridProbe& p) {
        const double ds = (p.strength - 0.5) / 0.5;
        const double dc = (p.cfg - 7.5) / 10.0;
        return std::sqrt(ds * ds + dc * dc);
    };
    int best = 0;
    for (int i = 1; i < static_cast<int>(probes.size()); ++i) {
        const GridProbe& a = probes[i];
        const GridProbe& b = probes[best];
        if (a.score > b.score) {
            best = i;
        } else if (a.score == b.score) {
            const double pa = proximity(a), pb = proximity(b);
            if (pa < pb || (pa == pb && (a.strength < b.strength ||
                                         (a.strength == b.strength && a.cfg < b.cfg))))
                best = i;
        }
    }
    return best;
}

namespace {

struct InstanceState {
    Embedding e_text;
    Embedding e_target;
    std::optional<SemanticDecomposer> decomposer;
    Decomposition dec_target;
    LayoutMask foreground;
};

InstanceState prepare_instance(const ImageTensor& x_target, const std::string& prompt, const AttackStack& stack) {
    if (prompt.empty()) throw Error("optimize_instance: empty prompt");
    InstanceState s;
    s.e_text = stack.embedder->embed_text(prompt);
    s.e_target = stack.embedder->embed_image(x_target);
    s.decomposer = stack.make_decomposer(s.e_text);
    s.dec_target = s.decomposer->decompose(s.e_target);
    s.foreground = stack.segmenter->foreground(x_target);
    return s;
}

// One optimization window (T inner steps) followed by an R-trial estimate.
struct IterationOutcome {
    ImageTensor candidate;
    SelectionEstimate estimate;
    double lpips = 0.0;
    bool accepted = true;
};

IterationOutcome run_iteration(const InstanceState& inst, const ImageTensor& x_target,
                               const std::vector<ImageTensor>& competitors, const AttackStack& stack,
                               const TrapConfig& config, const DecoderSettings& settings, int iteration,
                               std::uint64_t eval_seed, std::vector<LossBreakdown>* trace) {
    LayoutMask mask = stack.layout->generate(inst.e_text, inst.e_target, x_target.height, x_target.width);
    mask = refine_with_segmentation(mask, inst.foreground);

    InnerLoopContext ctx;
    ctx.e_text = &inst.e_text;
    ctx.x_target = &x_target;
    ctx.dec_target = &inst.dec_target;
    ctx.decomposer = &*inst.decomposer;
    ctx.decoder = stack.decoder;
    ctx.metric = stack.metric;
    ctx.fusion_scale = mask_mean(mask);
    ctx.settings = settings;
    ctx.weights = config.loss_weights;
    ctx.learning_rate = config.learning_rate;
    ctx.adam_beta1 = config.adam_beta1;
    ctx.adam_beta2 = config.adam_beta2;
    ctx.adam_epsilon = config.adam_epsilon;
    ctx.adam.reset(inst.e_target.values.size());  // fresh moments per iteration
    ctx.iteration = iteration;
    ctx.trace = trace;

    IterationOutcome out;
    out.candidate = x_target;  // pass-through when T == 0
    ctx.last_candidate = &out.candidate;
    Embedding e_adv = inst.e_target;  // e_adv starts at e_target
    for (int t = 0; t < config.inner_steps; ++t) {
        e_adv = inner_step(e_adv, ctx);
        if (stack.candidate_sink) stack.candidate_sink(iteration, ctx.step, out.candidate);
    }

    out.estimate = run_trials(out.candidate, competitors, *stack.agent, config.trials_per_eval,
                              config.candidate_count, eval_seed, stack.trial_options);
    if (!out.estimate.valid) throw AdapterError("agent failed during evaluation trials");
    out.lpips = stack.metric->distance(out.candidate, x_target);
    out.accepted = stack.decoder->differentiable() || out.lpips <= config.lpips_accept_bound;
    return out;
}

}  // namespace

DecoderSettings grid_search(const ImageTensor& x_target, const std::string& prompt,
                            const std::vector<ImageTensor>& competitors, const AttackStack& stack,
                            const TrapConfig& config) {
    config.validate();
    stack.validate();
    DecoderSettings settings;
    settings.seed = config.seed;
    if (config.strength_grid.size() == 1 && config.cfg_grid.size() == 1) {
        settings.strength = config.strength_grid[0];
        settings.cfg = config.cfg_grid[0];
        return settings;
    }
    const InstanceState inst = prepare_instance(x_target, prompt, stack);
    std::vector<GridProbe> probes;
    int cell = 0;
    for (double s : config.strength_grid) {
        for (double c : config.cfg_grid) {
            DecoderSettings probe_settings;
            probe_settings.strength = s;
            probe_settings.cfg = c;
            probe_settings.seed = mix_seed(config.seed, "grid-" + std::to_string(cell));
            const auto outcome = run_iteration(inst, x_target, competitors, stack, config, probe_settings, 0,
                                               mix_seed(config.seed, "grid-eval-" + std::to_string(cell)), nullptr);
            probes.push_back({s, c, outcome.estimate.p_adv});
            ++cell;
        }
    }
    const GridProbe& chosen = probes[static_cast<std::size_t>(select_grid_cell(probes))];
    settings.strength = chosen.strength;
    settings.cfg = chosen.cfg;
    return settings;
}

AttackResult optimize_instance(const ImageTensor& x_target, const std::string& prompt,
                               const std::vector<ImageTensor>& competitors, const AttackStack& stack,
                               const TrapConfig& config) {
    config.validate();
    stack.validate();
    if (static_cast<int>(competitors.size()) != config.candidate_count - 1)
        throw Error("optimize_instance: expected n-1 competitors");
    x_target.validate();

    AttackResult result;
    result.x_adv = x_target;
    try {
        result.settings_chosen = grid_search(x_target, prompt, competitors, stack, config);
        const InstanceState inst = prepare_instance(x_target, prompt, stack);
        for (int m = 1; m <= config.outer_iterations; ++m) {
            const auto outcome =
                run_iteration(inst, x_target, competitors, stack, config, result.settings_chosen, m,
                              mix_seed(config.seed, "eval-" + std::to_string(m)), &result.loss_trace);
            EvalRecord record;
            record.iteration = m;
            record.estimate = outcome.estimate;
            record.lpips_to_target = outcome.lpips;
            record.accepted = outcome.accepted;
            result.eval_trace.push_back(record);
            result.iterations_used = m;
            if (outcome.accepted && outcome.estimate.p_adv > result.best_score) {
                result.best_score = outcome.estimate.p_adv;
                result.x_adv = outcome.candidate;
            }
            if (result.best_score >= config.threshold) {
                result.status = AttackStatus::threshold_reached;
                return result;
            }
        }
        result.status = AttackStatus::budget_exhausted;
    } catch (const AdapterError& e) {
        result.status = AttackStatus::aborted;
        result.diagnostic = e.what();
    }
    return result;
}

ImageTensor unoptimized_diffusion(const ImageTensor& x_target, const std::string& prompt,
                                  const DecoderSettings& settings, const AttackStack& stack) {
    stack.validate();
    x_target.validate();
    const Embedding e_text = stack.embedder->embed_text(prompt);
    const Embedding e_target = stack.embedder->embed_image(x_target);
    const SemanticDecomposer decomposer = stack.make_decomposer(e_text);
    const Decomposition dec = decomposer.decompose(e_target);
    Embedding e_mod = dec.common;  // fused at mask mean 1
    return stack.decoder->decode(e_mod, e_text, x_target, settings);
}

}  // namespace trap
