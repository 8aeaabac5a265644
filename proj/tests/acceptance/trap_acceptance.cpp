// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance and threshold is pinned here, in code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trap/baselines.hpp"
#include "trap/decoder.hpp"
#include "trap/decomposer.hpp"
#include "trap/harness.hpp"
#include "trap/image_io.hpp"
#include "trap/losses.hpp"
#include "trap/optimizer.hpp"
#include "trap/pipeline.hpp"
#include "trap/util.hpp"

using namespace trap;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    std::function<void(std::vector<std::string>&)> run;  // appends failure messages
};

#define EXPECT(cond, message)                         \
    do {                                              \
        if (!(cond)) problems.push_back((message));   \
    } while (0)

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

Vec random_unit(std::size_t n, Rng& rng, double lo, double hi) {
    Vec v(n);
    for (auto& x : v) x = rng.normal();
    const double target = rng.uniform(lo, hi);
    const double s = target / norm(v);
    for (auto& x : v) x *= s;
    return v;
}

// ---------------------------------------------------------------------------
// criterion 1: loss identities
// ---------------------------------------------------------------------------
void criterion_loss_identities(std::vector<std::string>& problems) {
    const Embedding ex{{1.0, 0.0}, "s"};
    const Embedding ey{{0.0, 3.0}, "s"};
    const Embedding em{{-4.0, 0.0}, "s"};
    EXPECT(semantic_loss(ex, Embedding{{2.0, 0.0}, "s"}) == 0.0, "semantic_loss parallel != 0");
    EXPECT(semantic_loss(ex, ey) == 1.0, "semantic_loss orthogonal != 1");
    EXPECT(semantic_loss(ex, em) == 2.0, "semantic_loss antiparallel != 2");

    Decomposition a, b;
    a.distinctive = Embedding{{1.0, 0.0}, "s"};
    b.distinctive = Embedding{{-1.0, 0.0}, "s"};
    a.common = b.common = Embedding{{0.0, 0.0}, "s"};
    EXPECT(dist_loss(a, b) == 4.0, "dist_loss([1,0],[-1,0]) != 4");

    // weighted-sum invariant at 1e-9 on random fixtures
    const FilterBankMetric metric;
    Rng rng(41);
    for (int i = 0; i < 20; ++i) {
        ImageTensor xc(6, 6), xt(6, 6);
        for (auto& v : xc.data) v = rng.uniform();
        for (auto& v : xt.data) v = rng.uniform();
        Decomposition da, dt;
        da.distinctive = Embedding{random_unit(8, rng, 0.5, 2.0), "s"};
        dt.distinctive = Embedding{random_unit(8, rng, 0.5, 2.0), "s"};
        da.common = dt.common = Embedding{Vec(8, 0.0), "s"};
        const Embedding ea{random_unit(8, rng, 0.5, 2.0), "s"};
        const Embedding et{random_unit(8, rng, 0.5, 2.0), "s"};
        LossWeights w{rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0)};
        const LossBreakdown bd = total_loss(ea, et, xc, xt, da, dt, w, metric, GradientRoute{});
        const double expected = w.lambda1 * bd.lpips + w.lambda2 * bd.sem + w.lambda3 * bd.dist;
        EXPECT(std::abs(bd.total - expected) <= 1e-9,
               fmt("weighted-sum invariant violated by %.3e", std::abs(bd.total - expected)));
        EXPECT(bd.sem >= 0.0 && bd.sem <= 2.0, "sem outside [0,2]");
    }
}

// ---------------------------------------------------------------------------
// criterion 2: gradient checks
// ---------------------------------------------------------------------------
void criterion_gradient_checks(std::vector<std::string>& problems) {
    const double step = 1e-5;
    const double tol = 1e-4;

    auto vector_check = [&](const Vec& analytic, const std::function<double(const Vec&)>& f, const Vec& at,
                            const char* tag) {
        Vec fd(at.size());
        for (std::size_t i = 0; i < at.size(); ++i) {
            Vec x = at;
            x[i] += step;
            const double up = f(x);
            x[i] -= 2.0 * step;
            const double down = f(x);
            fd[i] = (up - down) / (2.0 * step);
        }
        const double err = norm(sub(analytic, fd)) / std::max(norm(fd), 1e-8);
        if (err >= tol) problems.push_back(std::string(tag) + fmt(" gradient error %.3e", err));
    };

    // semantic loss at 100 seeded points with |e| in [0.5, 2]
    for (int i = 0; i < 100; ++i) {
        Rng rng(1000 + i);
        const Vec e = random_unit(10, rng, 0.5, 2.0);
        const Vec t = random_unit(10, rng, 0.5, 2.0);
        const Embedding et{t, "s"};
        vector_check(semantic_loss_gradient(Embedding{e, "s"}, et),
                     [&](const Vec& x) { return semantic_loss(Embedding{x, "s"}, et); }, e, "semantic");
    }

    // distinctive loss through the analytic decomposer
    {
        Rng rng(77);
        const Embedding prompt{random_unit(10, rng, 0.8, 1.2), "s"};
        const SemanticDecomposer dec = SemanticDecomposer::analytic(prompt, 20, 3);
        for (int i = 0; i < 100; ++i) {
            Rng prng(2000 + i);
            const Vec e = random_unit(10, prng, 0.5, 2.0);
            const Decomposition dec_target = dec.decompose(Embedding{random_unit(10, prng, 0.5, 2.0), "s"});
            const Decomposition dec_adv = dec.decompose(Embedding{e, "s"});
            const Vec analytic = dec.vjp(Embedding{e, "s"}, {}, dist_loss_branch_gradient(dec_adv, dec_target));
            vector_check(analytic,
                         [&](const Vec& x) { return dist_loss(dec.decompose(Embedding{x, "s"}), dec_target); }, e,
                         "distinctive");
        }
    }

    // toy-decoder perceptual path: lpips(decode(scale * common(e)), target)
    {
        Rng rng(99);
        const Embedding prompt{random_unit(8, rng, 0.8, 1.2), "s"};
        const SemanticDecomposer dec = SemanticDecomposer::analytic(prompt, 16, 5);
        const LinearToyDecoder decoder = LinearToyDecoder::seeded(16, 4, 4, 9, 0.02);
        const FilterBankMetric metric;
        const ImageTensor x_init(4, 4, 0.5);
        DecoderSettings settings;
        settings.strength = 0.6;
        const double fusion = 0.7;
        for (int i = 0; i < 100; ++i) {
            Rng prng(3000 + i);
            const Vec e = random_unit(8, prng, 0.5, 2.0);
            ImageTensor x_target(4, 4);
            for (auto& v : x_target.data) v = prng.uniform(0.35, 0.65);
            auto lpips_of = [&](const Vec& x) {
                const Decomposition d = dec.decompose(Embedding{x, "s"});
                Embedding e_mod{scaled(d.common.values, fusion), "s"};
                return lpips_loss(decoder.decode(e_mod, prompt, x_init, settings), x_target, metric);
            };
            const Decomposition dec_adv = dec.decompose(Embedding{e, "s"});
            Embedding e_mod{scaled(dec_adv.common.values, fusion), "s"};
            const ImageTensor x_cand = decoder.decode(e_mod, prompt, x_init, settings);
            const Vec img_grad = metric.gradient(x_cand, x_target);
            Vec mod_grad = decoder.vjp(e_mod, x_init, settings, img_grad);
            for (auto& v : mod_grad) v *= fusion;
            const Vec analytic = dec.vjp(Embedding{e, "s"}, mod_grad, {});
            vector_check(analytic, lpips_of, e, "lpips-path");
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 3: Algorithm-1 loop contract over 50 seeded toy instances
// ---------------------------------------------------------------------------
void criterion_loop_contract(std::vector<std::string>& problems) {
    const char* prompts[] = {"a golden lantern by the sea", "a striped teapot on a shelf",
                             "a rustic kettle in the snow", "a bright umbrella on a bench"};
    int sem_improved = 0;
    for (int run = 0; run < 50; ++run) {
        const std::uint64_t seed = 5000 + run;
        auto embedder = std::make_shared<ToyEmbedder>(32, seed);
        LayoutGenerator layout(32, mix_seed(seed, "layout"));
        CenterBoxSegmenter segmenter(0.6);
        FilterBankMetric metric;
        AdjointToyDecoder decoder(embedder, 64, mix_seed(seed, "lift"), 2.0);
        const std::string prompt = prompts[run % 4];
        SurrogateArgmaxAgent agent(*embedder, prompt, 4, 8);

        AttackStack stack;
        stack.embedder = embedder.get();
        stack.make_decomposer = [&](const Embedding& p) { return SemanticDecomposer::analytic(p, 64, mix_seed(seed, "lift")); };
        stack.layout = &layout;
        stack.segmenter = &segmenter;
        stack.metric = &metric;
        stack.decoder = &decoder;
        stack.agent = &agent;
        stack.trial_options.common_height = 32;
        stack.trial_options.separator_px = 8;
        stack.trial_options.task = "Pick the best match";

        Rng rng(seed);
        ImageTensor target(32, 32);
        for (auto& v : target.data) v = rng.uniform(0.25, 0.75);
        std::vector<ImageTensor> competitors;
        for (int k = 0; k < 3; ++k) {
            ImageTensor c(32, 32);
            for (auto& v : c.data) v = rng.uniform(0.25, 0.75);
            competitors.push_back(std::move(c));
        }

        TrapConfig cfg;
        cfg.loss_weights = LossWeights{0.0, 1.0, 0.0};  // w = (0, 1, 0)
        cfg.outer_iterations = 4;
        cfg.inner_steps = 20;
        cfg.learning_rate = 0.05;
        cfg.candidate_count = 4;
        cfg.trials_per_eval = 30;
        cfg.threshold = 0.25;
        cfg.strength_grid = {0.6};
        cfg.cfg_grid = {7.5};
        cfg.seed = seed;

        const AttackResult result = optimize_instance(target, prompt, competitors, stack, cfg);

        // best_score must equal the running max and the loop must stop the
        // first time the running max reaches the threshold
        double best = 0.0;
        std::size_t stop_at = result.eval_trace.size();
        for (std::size_t k = 0; k < result.eval_trace.size(); ++k) {
            const auto& record = result.eval_trace[k];
            if (record.accepted && record.estimate.p_adv > best) best = record.estimate.p_adv;
            if (best >= cfg.threshold) {
                stop_at = k + 1;
                break;
            }
        }
        if (result.best_score != best) problems.push_back(fmt("run %g: best_score %.3f != running max", run, best));
        if (result.eval_trace.size() != stop_at)
            problems.push_back(fmt("run %g: early stop did not fire at iteration %g", run, double(stop_at)));
        if ((result.status == AttackStatus::threshold_reached) != (best >= cfg.threshold))
            problems.push_back(fmt("run %g: status inconsistent with best score", run));

        if (!result.loss_trace.empty() && result.loss_trace.back().sem <= result.loss_trace.front().sem)
            ++sem_improved;
    }
    if (sem_improved < 48)  // >= 95% of 50 runs
        problems.push_back(fmt("semantic loss improved in only %g of 50 runs (need >= 48)", double(sem_improved)));
}

// ---------------------------------------------------------------------------
// criterion 4: estimator equivalence and position uniformity
// ---------------------------------------------------------------------------
void criterion_estimator(std::vector<std::string>& problems) {
    // brute force over all 6 permutations of n = 3 with a deterministic
    // position-biased adapter
    FixedSlotAgent agent(2);
    Rng rng(17);
    ImageTensor x_adv(12, 12);
    for (auto& v : x_adv.data) v = rng.uniform();
    std::vector<ImageTensor> competitors;
    for (int k = 0; k < 2; ++k) {
        ImageTensor c(12, 12);
        for (auto& v : c.data) v = rng.uniform();
        competitors.push_back(std::move(c));
    }
    TrialOptions opts;
    opts.common_height = 12;
    opts.separator_px = 4;

    std::vector<ImageTensor> images = {x_adv, competitors[0], competitors[1]};
    std::vector<int> order = {0, 1, 2};
    int brute_wins = 0, total = 0;
    std::sort(order.begin(), order.end());
    do {
        const ImageTensor composite = compose_trial(images, order, opts.common_height, opts.separator_px);
        const auto choice = parse_choice(agent.choose(composite, "pick"), 3);
        int adv_slot = 0;
        for (int k = 0; k < 3; ++k)
            if (order[k] == 0) adv_slot = k;
        if (choice && *choice == adv_slot + 1) ++brute_wins;
        ++total;
    } while (std::next_permutation(order.begin(), order.end()));
    const double brute = static_cast<double>(brute_wins) / total;

    const SelectionEstimate est6 = run_trials(x_adv, competitors, agent, 6, 3, 3, opts, TrialScheme::stratified);
    const SelectionEstimate est24 = run_trials(x_adv, competitors, agent, 24, 3, 4, opts, TrialScheme::stratified);
    EXPECT(est6.p_adv == brute, fmt("stratified R=6 %.4f != brute force %.4f", est6.p_adv, brute));
    EXPECT(est24.p_adv == brute, fmt("stratified R=24 %.4f != brute force %.4f", est24.p_adv, brute));

    // chi-square uniformity of the adversarial slot over R = 2400, n = 4
    std::vector<ImageTensor> three(3, competitors[0]);
    const SelectionEstimate est = run_trials(x_adv, three, agent, 2400, 4, 2024, opts);
    EXPECT(est.trials == 2400, "uniformity run incomplete");
    const double expected = 2400.0 / 4.0;
    double chi2 = 0.0;
    for (int c : est.per_position_placed) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT(chi2 < 11.3449, fmt("chi-square %.3f >= 11.3449 (alpha = 0.01, 3 dof)", chi2));
}

// ---------------------------------------------------------------------------
// criterion 5 fixture: the pinned toy end-to-end configuration
// ---------------------------------------------------------------------------
ExperimentConfig acceptance_config(const std::string& workdir, const std::string& output_dir) {
    ExperimentConfig c;
    c.run.output_dir = output_dir;
    c.run.run_id = "acceptance";
    c.run.seed = 7;
    c.run.workers = 4;
    c.dataset.manifest = workdir + "/dataset/captions.json";
    c.dataset.count = 26;  // bootstrap exclusions leave at least 20 accepted
    c.dataset.n = 4;
    c.backends.embedder_dim = 64;
    c.backends.branch_dim = 128;
    c.backends.decoder_gain = 2.0;
    c.trap.outer_iterations = 3;
    c.trap.inner_steps = 20;
    c.trap.learning_rate = 0.05;
    c.trap.candidate_count = 4;
    c.trap.trials_per_eval = 100;
    c.trap.threshold = 0.25;  // 1/n
    c.trap.strength_grid = {0.5, 0.8};
    c.trap.cfg_grid = {7.5};
    c.baseline_budget.epsilon = 8.0 / 255.0;
    c.baseline_budget.query_budget = 2000;
    c.baseline_budget.step_size = 0.005;
    c.baseline_budget.samples_per_step = 8;
    c.eval.trials = 100;
    c.eval.common_height = 32;
    c.eval.separator_px = 8;
    c.methods = {"initial", "trap", "spsa", "bandit", "noopt"};
    c.ablations.temperatures = {0.0, 0.3, 0.7, 1.0};
    c.ablations.threshold_epsilons = {0.0, 0.05, 0.1, 0.2, 0.35};
    c.ablations.templates = {"default", "v1", "v2", "v3", "v4"};
    c.ablations.methods = {"trap", "noopt"};
    return c;
}

struct EndToEnd {
    ExperimentConfig config;
    ExperimentReport report;
    std::vector<std::string> first20;  // instance ids of the evaluated subset
    std::map<std::string, double> asr; // over the 20 pinned instances
};

EndToEnd g_end_to_end;  // criterion 5 runs once; 7 and 8 reuse its artifacts

void criterion_end_to_end(std::vector<std::string>& problems) {
    const std::string work = (fs::current_path() / "trap_acceptance_work").string();
    fs::remove_all(work);
    fs::create_directories(work);
    generate_synthetic_dataset(work + "/dataset", 48, 32, 100);

    g_end_to_end.config = acceptance_config(work, work + "/runs");
    g_end_to_end.report = run_experiment(g_end_to_end.config);

    const auto specs = read_instances_json(run_directory(g_end_to_end.config) + "/instances.json");
    for (const auto& s : specs) {
        if (s.bootstrap != InstanceSpec::Bootstrap::accepted || g_end_to_end.first20.size() >= 20) continue;
        g_end_to_end.first20.push_back(s.id);
        EXPECT(s.initial_p < 0.25, "instance " + s.id + " bootstrapped with initial P >= 0.25");
    }
    EXPECT(g_end_to_end.first20.size() == 20,
           fmt("only %g bootstrapped instances available (need 20)", double(g_end_to_end.first20.size())));
    if (g_end_to_end.first20.size() < 20) return;

    const std::set<std::string> keep(g_end_to_end.first20.begin(), g_end_to_end.first20.end());
    const auto rows = read_estimates_jsonl(run_directory(g_end_to_end.config) + "/estimates.jsonl");
    std::map<std::string, std::vector<SelectionEstimate>> by_method;
    for (const auto& row : rows)
        if (row.context == "main" && keep.count(row.instance)) by_method[row.method].push_back(row.estimate);
    for (const auto& method : g_end_to_end.config.methods) {
        EXPECT(by_method[method].size() == 20, "missing evaluations for method " + method);
        g_end_to_end.asr[method] =
            by_method[method].empty() ? 0.0 : compute_asr(by_method[method], g_end_to_end.config.trap.threshold);
    }

    const double trap = g_end_to_end.asr["trap"];
    const double spsa = g_end_to_end.asr["spsa"];
    const double initial = g_end_to_end.asr["initial"];
    const double noopt = g_end_to_end.asr["noopt"];
    EXPECT(trap >= 0.8, fmt("TRAP ASR %.2f < 0.8", trap));
    EXPECT(noopt <= 0.4, fmt("unoptimized-diffusion ASR %.2f > 0.4", noopt));
    EXPECT(trap > spsa, fmt("ordering violated: TRAP %.2f <= SPSA %.2f", trap, spsa));
    EXPECT(spsa > initial, fmt("ordering violated: SPSA %.2f <= initial %.2f", spsa, initial));
}

// ---------------------------------------------------------------------------
// criterion 6: SPSA convergence, bandit improvement, budget exactness
// ---------------------------------------------------------------------------
void criterion_baselines(std::vector<std::string>& problems) {
    Rng rng(11);
    ImageTensor target(8, 8);
    for (auto& v : target.data) v = rng.uniform(0.3, 0.7);

    PerturbationBudget budget;
    budget.epsilon = 0.1;
    budget.step_size = 0.02;
    budget.spsa_c = 0.01;
    budget.samples_per_step = 8;
    budget.query_budget = 200 * 2 * budget.samples_per_step;  // 200 SPSA steps

    Rng shift_rng(21);
    ImageTensor optimum = target;
    for (auto& v : optimum.data) v = std::clamp(v + shift_rng.uniform(-budget.epsilon / 2, budget.epsilon / 2), 0.05, 0.95);
    auto quad = [&optimum](const ImageTensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = x.data[i] - optimum.data[i];
            s -= d * d;
        }
        return s;
    };

    ScoringOracle spsa_oracle(ScoringOracle::Mode::surrogate, quad);
    const BaselineResult spsa = spsa_attack(target, spsa_oracle, budget, 31);
    EXPECT(spsa.completed, "spsa aborted");
    EXPECT(spsa.queries_used == budget.query_budget,
           fmt("spsa used %g queries, budget %g", double(spsa.queries_used), double(budget.query_budget)));
    EXPECT(quad(spsa.x_adv) >= -1e-3, fmt("spsa final score %.3e below optimum - 1e-3", quad(spsa.x_adv)));
    double linf = 0.0;
    for (std::size_t i = 0; i < target.data.size(); ++i)
        linf = std::max(linf, std::abs(spsa.x_adv.data[i] - target.data[i]));
    EXPECT(linf <= budget.epsilon + 1e-12, "spsa violated the epsilon ball");

    // bandit on a smooth quadratic expressible by its tiled prior
    ImageTensor smooth_opt = target;
    const double shift[3] = {0.04, -0.03, 0.02};
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) smooth_opt.at(y, x, c) = std::clamp(target.at(y, x, c) + shift[c], 0.05, 0.95);
    auto smooth_quad = [&smooth_opt](const ImageTensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = x.data[i] - smooth_opt.data[i];
            s -= d * d;
        }
        return s;
    };
    PerturbationBudget bandit_budget = budget;
    bandit_budget.step_size = 0.002;
    bandit_budget.query_budget = 2000;
    ScoringOracle bandit_oracle(ScoringOracle::Mode::surrogate, smooth_quad);
    const BaselineResult bandit = bandit_attack(target, bandit_oracle, bandit_budget, 1);
    EXPECT(bandit.completed, "bandit aborted");
    const int per_step = 2 * bandit_budget.samples_per_step + 1;
    EXPECT(bandit.queries_used == (bandit_budget.query_budget / per_step) * per_step,
           fmt("bandit used %g queries (budget %g)", double(bandit.queries_used), double(bandit_budget.query_budget)));
    EXPECT(bandit.queries_used <= bandit_budget.query_budget, "bandit exceeded the query budget");
    EXPECT(smooth_quad(bandit.x_adv) > smooth_quad(target),
           fmt("bandit did not improve: %.4f vs %.4f", smooth_quad(bandit.x_adv), smooth_quad(target)));
    linf = 0.0;
    for (std::size_t i = 0; i < target.data.size(); ++i)
        linf = std::max(linf, std::abs(bandit.x_adv.data[i] - target.data[i]));
    EXPECT(linf <= bandit_budget.epsilon + 1e-12, "bandit violated the epsilon ball");
}

// ---------------------------------------------------------------------------
// criterion 7: threshold monotonicity + byte-identical recomputation
// ---------------------------------------------------------------------------
void criterion_threshold_sweep(std::vector<std::string>& problems) {
    if (g_end_to_end.first20.empty()) {
        problems.push_back("end-to-end run unavailable (criterion 5 failed earlier)");
        return;
    }
    const std::string run_dir = run_directory(g_end_to_end.config);
    for (const auto& method : g_end_to_end.config.methods) {
        double previous = 1.0;
        int points = 0;
        for (const auto& point : g_end_to_end.report.threshold_sweep) {
            if (point.method != method) continue;
            if (point.asr > previous + 1e-12)
                problems.push_back("threshold sweep not monotone for " + method +
                                   fmt(": %.3f then %.3f", previous, point.asr));
            previous = point.asr;
            ++points;
        }
        EXPECT(points == static_cast<int>(g_end_to_end.config.ablations.threshold_epsilons.size()),
               "threshold sweep incomplete for " + method);
    }

    const std::string before = read_text_file(run_dir + "/report.json");
    stage_report(g_end_to_end.config);  // recompute from persisted estimates.jsonl
    const std::string after = read_text_file(run_dir + "/report.json");
    EXPECT(before == after, "recomputed report.json differs from the run's report.json");
}

// ---------------------------------------------------------------------------
// criterion 8: determinism of the full toy acceptance run
// ---------------------------------------------------------------------------
void criterion_determinism(std::vector<std::string>& problems) {
    if (g_end_to_end.first20.empty()) {
        problems.push_back("end-to-end run unavailable (criterion 5 failed earlier)");
        return;
    }
    const std::string work = (fs::current_path() / "trap_acceptance_work").string();
    ExperimentConfig second = acceptance_config(work, work + "/runs_repeat");
    run_experiment(second);
    const std::string a = read_text_file(run_directory(g_end_to_end.config) + "/report.json");
    const std::string b = read_text_file(run_directory(second) + "/report.json");
    EXPECT(a == b, "two runs with the same config produced different report.json");
    const std::string ea = read_text_file(run_directory(g_end_to_end.config) + "/estimates.jsonl");
    const std::string eb = read_text_file(run_directory(second) + "/estimates.jsonl");
    EXPECT(ea == eb, "two runs with the same config produced different estimates.jsonl");
}

int run_all(const std::vector<Criterion>& criteria) {
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::vector<std::string> problems;
        const auto start = std::chrono::steady_clock::now();
        try {
            criteria[i].run(problems);
        } catch (const std::exception& e) {
            problems.push_back(std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (problems.empty()) {
            std::printf("[PASS] criterion %zu: %s (%.1f s)\n", i + 1, criteria[i].name.c_str(), seconds);
        } else {
            ++failures;
            std::printf("[FAIL] criterion %zu: %s (%.1f s)\n", i + 1, criteria[i].name.c_str(), seconds);
            for (const auto& p : problems) std::printf("       - %s\n", p.c_str());
        }
        std::fflush(stdout);
    }
    return failures;
}

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {"loss identities (exact values, weighted sum at 1e-9)", criterion_loss_identities},
        {"gradient checks vs central finite differences (rel err < 1e-4, 100 points each)",
         criterion_gradient_checks},
        {"optimization loop contract over 50 seeded toy instances", criterion_loop_contract},
        {"estimator equivalence (stratified == brute force; chi-square uniformity at alpha 0.01)",
         criterion_estimator},
        {"toy end-to-end ordering on 20 pinned instances (TRAP >= 0.8, noopt <= 0.4, TRAP > SPSA > initial)",
         criterion_end_to_end},
        {"SPSA within 1e-3 of the quadratic optimum; bandit strictly improves; budgets exact",
         criterion_baselines},
        {"threshold sweep monotone; report recomputation byte-identical", criterion_threshold_sweep},
        {"full-run determinism (identical report.json across runs)", criterion_determinism},
    };
    const int failures = run_all(criteria);
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
