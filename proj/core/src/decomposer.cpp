// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/decomposer.hpp"

#include <cmath>

#include "trap/error.hpp"
#include "trap/serialization.hpp"

namespace trap {

namespace {

// Cosine that tolerates a zero vector (returns 0 with zero gradient); the
// training objective hits this only at degenerate initializations.
double safe_cos(const Vec& a, const Vec& b, Vec* grad_a = nullptr) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na < 1e-12 || nb < 1e-12) {
        if (grad_a) grad_a->assign(a.size(), 0.0);
        return 0.0;
    }
    const double c = dot(a, b) / (na * nb);
    if (grad_a) {
        grad_a->assign(a.size(), 0.0);
        for (std::size_t i = 0; i < a.size(); ++i)
            (*grad_a)[i] = b[i] / (na * nb) - c * a[i] / (na * na);
    }
    return c;
}

}  // namespace

Matrix SemanticDecomposer::lift_matrix(int branch_dim, int input_dim, std::uint64_t seed) {
    return orthonormal_columns(branch_dim, input_dim, mix_seed(seed, "decomposer-lift"));
}

SemanticDecomposer SemanticDecomposer::analytic(const Embedding& prompt, int branch_dim, std::uint64_t lift_seed) {
    if (prompt.dim() < 1) throw ShapeMismatchError("decomposer: empty prompt embedding");
    if (branch_dim < prompt.dim()) throw ShapeMismatchError("decomposer: branch_dim must be >= input_dim");
    SemanticDecomposer s;
    s.mode_ = DecomposerMode::analytic;
    s.input_dim_ = prompt.dim();
    s.branch_dim_ = branch_dim;
    s.seed_ = lift_seed;
    s.lift_ = lift_matrix(branch_dim, prompt.dim(), lift_seed);
    const double n = norm(prompt.values);
    if (n == 0.0) throw Error("decomposer: zero prompt embedding");
    s.prompt_unit_ = scaled(prompt.values, 1.0 / n);
    s.lift_prompt_ = matvec(s.lift_, s.prompt_unit_);
    return s;
}

SemanticDecomposer SemanticDecomposer::learned_init(int input_dim, int branch_dim, std::uint64_t seed) {
    if (input_dim < 1 || branch_dim < input_dim)
        throw ShapeMismatchError("decomposer: need input_dim >= 1 and branch_dim >= input_dim");
    SemanticDecomposer s;
    s.mode_ = DecomposerMode::learned;
    s.input_dim_ = input_dim;
    s.branch_dim_ = branch_dim;
    s.seed_ = seed;
    s.lift_ = lift_matrix(branch_dim, input_dim, seed);
    auto init_branch = [&](const char* tag) {
        Branch b;
        Rng rng(mix_seed(seed, tag));
        b.w1 = random_gaussian(branch_dim, input_dim, rng, 1.0 / std::sqrt(static_cast<double>(input_dim)));
        b.b1.assign(static_cast<std::size_t>(branch_dim), 0.0);
        b.mu.assign(static_cast<std::size_t>(branch_dim), 0.0);
        b.var.assign(static_cast<std::size_t>(branch_dim), 1.0);
        b.w2 = random_gaussian(branch_dim, branch_dim, rng, 1.0 / std::sqrt(static_cast<double>(branch_dim)));
        b.b2.assign(static_cast<std::size_t>(branch_dim), 0.0);
        return b;
    };
    s.common_ = init_branch("branch-common");
    s.distinctive_ = init_branch("branch-distinctive");
    return s;
}

Vec SemanticDecomposer::Branch::forward(const Vec& e) const {
    Vec z = matvec(w1, e);
    axpy(1.0, b1, z);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zn = (z[i] - mu[i]) / std::sqrt(var[i] + kNormEps);
        z[i] = zn > 0.0 ? zn : 0.0;
    }
    Vec out = matvec(w2, z);
    axpy(1.0, b2, out);
    return out;
}

Vec SemanticDecomposer::Branch::input_grad(const Vec& e, const Vec& v_out) const {
    Vec z = matvec(w1, e);
    axpy(1.0, b1, z);
    Vec g = matvec_t(w2, v_out);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double inv_std = 1.0 / std::sqrt(var[i] + kNormEps);
        const double zn = (z[i] - mu[i]) * inv_std;
        g[i] = zn > 0.0 ? g[i] * inv_std : 0.0;
    }
    return matvec_t(w1, g);
}

Decomposition SemanticDecomposer::decompose(const Embedding& e) const {
    if (e.dim() != input_dim_)
        throw ShapeMismatchError("decompose: embedding has dimension " + std::to_string(e.dim()) + ", expected " +
                                 std::to_string(input_dim_));
    Decomposition d;
    if (mode_ == DecomposerMode::analytic) {
        const double t = dot(e.values, prompt_unit_);
        d.common.values = scaled(lift_prompt_, t);
        Vec lifted = matvec(lift_, e.values);
        axpy(-t, lift_prompt_, lifted);
        d.distinctive.values = std::move(lifted);
    } else {
        d.common.values = common_.forward(e.values);
        d.distinctive.values = distinctive_.forward(e.values);
    }
    d.common.space_id = e.space_id + "/common";
    d.distinctive.space_id = e.space_id + "/distinctive";
    return d;
}

Vec SemanticDecomposer::pullback(const Vec& branch_values) const {
    if (static_cast<int>(branch_values.size()) != branch_dim_)
        throw ShapeMismatchError("pullback: branch has length " + std::to_string(branch_values.size()) +
                                 ", expected " + std::to_string(branch_dim_));
    return matvec_t(lift_, branch_values);
}

Vec SemanticDecomposer::vjp(const Embedding& e, const Vec& v_common, const Vec& v_distinctive) const {
    if (e.dim() != input_dim_) throw ShapeMismatchError("vjp: embedding dimension mismatch");
    Vec g(static_cast<std::size_t>(input_dim_), 0.0);
    if (mode_ == DecomposerMode::analytic) {
        if (!v_common.empty()) {
            // J_common = lift * u u^T  =>  J^T v = u (u . lift^T v)
            const Vec pb = pullback(v_common);
            axpy(dot(pb, prompt_unit_), prompt_unit_, g);
        }
        if (!v_distinctive.empty()) {
            // J_dist = lift * (I - u u^T)
            const Vec pb = pullback(v_distinctive);
            axpy(1.0, pb, g);
            axpy(-dot(pb, prompt_unit_), prompt_unit_, g);
        }
    } else {
        if (!v_common.empty()) axpy(1.0, common_.input_grad(e.values, v_common), g);
        if (!v_distinctive.empty()) axpy(1.0, distinctive_.input_grad(e.values, v_distinctive), g);
    }
    return g;
}

double SemanticDecomposer::corpus_loss(const std::vector<std::pair<Embedding, Embedding>>& corpus) const {
    double total = 0.0;
    for (const auto& [image, prompt] : corpus) {
        const Vec pc = pullback(common_.forward(image.values));
        const Vec pd = pullback(distinctive_.forward(image.values));
        Vec recon = add(pc, pd);
        const Vec diff = sub(recon, image.values);
        total += -safe_cos(pc, prompt.values) + std::abs(safe_cos(pd, prompt.values)) + dot(diff, diff);
    }
    return total / static_cast<double>(corpus.size());
}

// Training scratch: parameter gradients for one branch.
struct DecomposerTrainer {
    struct Grads {
        Matrix w1, w2;
        Vec b1, b2;
    };

    static Grads zero_like(const SemanticDecomposer::Branch& b) {
        Grads g;
        g.w1 = Matrix(b.w1.rows, b.w1.cols);
        g.w2 = Matrix(b.w2.rows, b.w2.cols);
        g.b1.assign(b.b1.size(), 0.0);
        g.b2.assign(b.b2.size(), 0.0);
        return g;
    }

    // Accumulates parameter gradients for out-cotangent v_out at input e.
    static void accumulate(const SemanticDecomposer::Branch& b, const Vec& e, const Vec& v_out, Grads& g) {
        Vec z = matvec(b.w1, e);
        axpy(1.0, b.b1, z);
        Vec r(z.size());
        Vec inv_std(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            inv_std[i] = 1.0 / std::sqrt(b.var[i] + SemanticDecomposer::kNormEps);
            const double zn = (z[i] - b.mu[i]) * inv_std[i];
            r[i] = zn > 0.0 ? zn : 0.0;
        }
        // out = w2 r + b2
        for (int i = 0; i < g.w2.rows; ++i) {
            const double go = v_out[i];
            g.b2[i] += go;
            double* row = &g.w2.a[static_cast<std::size_t>(i) * g.w2.cols];
            for (int j = 0; j < g.w2.cols; ++j) row[j] += go * r[j];
        }
        Vec gz = matvec_t(b.w2, v_out);
        for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = r[i] > 0.0 ? gz[i] * inv_std[i] : 0.0;
        for (int i = 0; i < g.w1.rows; ++i) {
            const double gi = gz[i];
            if (gi == 0.0) continue;
            g.b1[i] += gi;
            double* row = &g.w1.a[static_cast<std::size_t>(i) * g.w1.cols];
            for (std::size_t j = 0; j < e.size(); ++j) row[j] += gi * e[j];
        }
    }

    static void apply(SemanticDecomposer::Branch& b, const Grads& g, double step) {
        for (std::size_t i = 0; i < b.w1.a.size(); ++i) b.w1.a[i] -= step * g.w1.a[i];
        for (std::size_t i = 0; i < b.b1.size(); ++i) b.b1[i] -= step * g.b1[i];
        for (std::size_t i = 0; i < b.w2.a.size(); ++i) b.w2.a[i] -= step * g.w2.a[i];
        for (std::size_t i = 0; i < b.b2.size(); ++i) b.b2[i] -= step * g.b2[i];
    }
};

TrainStats SemanticDecomposer::train(const std::vector<std::pair<Embedding, Embedding>>& corpus,
                                     const TrainOptions& options) {
    if (mode_ != DecomposerMode::learned) throw Error("train: decomposer is not in learned mode");
    if (corpus.empty()) throw Error("train: empty corpus");
    if (options.epochs < 1) throw Error("train: epochs must be >= 1");
    for (const auto& [image, prompt] : corpus)
        if (image.dim() != input_dim_ || prompt.dim() != input_dim_)
            throw ShapeMismatchError("train: corpus pair dimension mismatch");

    // Freeze normalization statistics from the initial corpus pass; training
    // and inference then share the exact same affine normalization.
    auto freeze_stats = [&](Branch& b) {
        Vec mean(b.b1.size(), 0.0);
        Vec sq(b.b1.size(), 0.0);
        for (const auto& [image, prompt] : corpus) {
            Vec z = matvec(b.w1, image.values);
            axpy(1.0, b.b1, z);
            for (std::size_t i = 0; i < z.size(); ++i) {
                mean[i] += z[i];
                sq[i] += z[i] * z[i];
            }
        }
        const double inv_n = 1.0 / static_cast<double>(corpus.size());
        for (std::size_t i = 0; i < mean.size(); ++i) {
            mean[i] *= inv_n;
            b.mu[i] = mean[i];
            b.var[i] = std::max(sq[i] * inv_n - mean[i] * mean[i], 0.0);
        }
    };
    freeze_stats(common_);
    freeze_stats(distinctive_);

    TrainStats stats;
    auto mean_distinctive_norm = [&] {
        double s = 0.0;
        for (const auto& [image, prompt] : corpus) s += norm(pullback(distinctive_.forward(image.values)));
        return s / static_cast<double>(corpus.size());
    };

    double loss = corpus_loss(corpus);
    stats.epoch_loss.push_back(loss);
    stats.epoch_distinctive_norm.push_back(mean_distinctive_norm());

    const double inv_n = 1.0 / static_cast<double>(corpus.size());
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        auto gc = DecomposerTrainer::zero_like(common_);
        auto gd = DecomposerTrainer::zero_like(distinctive_);
        for (const auto& [image, prompt] : corpus) {
            const Vec out_c = common_.forward(image.values);
            const Vec out_d = distinctive_.forward(image.values);
            const Vec pc = pullback(out_c);
            const Vec pd = pullback(out_d);
            Vec gpc, gpd;
            safe_cos(pc, prompt.values, &gpc);
            const double cd = safe_cos(pd, prompt.values, &gpd);
            const double sign_d = cd >= 0.0 ? 1.0 : -1.0;
            Vec recon_grad = add(pc, pd);
            axpy(-1.0, image.values, recon_grad);
            // d/dpc [-cos(pc,t) + ||pc+pd-e||^2], d/dpd [|cos(pd,t)| + ...]
            Vec dpc = scaled(gpc, -1.0);
            axpy(2.0, recon_grad, dpc);
            Vec dpd = scaled(gpd, sign_d);
            axpy(2.0, recon_grad, dpd);
            // p = lift^T out  =>  d/d out = lift * d/dp
            Vec vc = matvec(lift_, dpc);
            Vec vd = matvec(lift_, dpd);
            for (auto& v : vc) v *= inv_n;
            for (auto& v : vd) v *= inv_n;
            DecomposerTrainer::accumulate(common_, image.values, vc, gc);
            DecomposerTrainer::accumulate(distinctive_, image.values, vd, gd);
        }

        // Backtracking keeps the per-epoch loss non-increasing.
        double step = options.learning_rate;
        bool applied = false;
        for (int bt = 0; bt < 20 && step > 0.0; ++bt) {
            Branch save_c = common_;
            Branch save_d = distinctive_;
            DecomposerTrainer::apply(common_, gc, step);
            DecomposerTrainer::apply(distinctive_, gd, step);
            const double new_loss = corpus_loss(corpus);
            if (new_loss <= loss) {
                loss = new_loss;
                applied = true;
                break;
            }
            common_ = std::move(save_c);
            distinctive_ = std::move(save_d);
            step *= 0.5;
        }
        (void)applied;
        stats.epoch_loss.push_back(loss);
        stats.epoch_distinctive_norm.push_back(mean_distinctive_norm());
    }
    return stats;
}

SemanticDecomposer train_decomposer(const std::vector<std::pair<Embedding, Embedding>>& corpus, int epochs,
                                    std::uint64_t seed, TrainStats* stats, double learning_rate, int branch_dim) {
    if (corpus.empty()) throw Error("train_decomposer: empty corpus");
    const int d = corpus.front().first.dim();
    const int h = branch_dim > 0 ? branch_dim : 2 * d;
    SemanticDecomposer s = SemanticDecomposer::learned_init(d, h, seed);
    TrainOptions options;
    options.epochs = epochs;
    options.learning_rate = learning_rate;
    TrainStats st = s.train(corpus, options);
    if (stats) *stats = std::move(st);
    return s;
}

// Serialization. The lift map is regenerated from the header seed on load
// (bit-exact orthonormality survives the float32 file format that way);
// only parameters that cannot be regenerated are stored.
void SemanticDecomposer::save(const std::string& path) const {
    WeightsHeader header;
    header.mode = static_cast<std::uint32_t>(mode_);
    header.d = static_cast<std::uint32_t>(input_dim_);
    header.h = static_cast<std::uint32_t>(branch_dim_);
    header.seed = seed_;
    if (mode_ == DecomposerMode::analytic) {
        write_weights_file(path, header, {&prompt_unit_});
    } else {
        write_weights_file(path, header,
                           {&common_.w1.a, &common_.b1, &common_.mu, &common_.var, &common_.w2.a, &common_.b2,
                            &distinctive_.w1.a, &distinctive_.b1, &distinctive_.mu, &distinctive_.var,
                            &distinctive_.w2.a, &distinctive_.b2});
    }
}

SemanticDecomposer SemanticDecomposer::load(const std::string& path) {
    WeightsHeader header = read_weights_header(path);
    const auto d = static_cast<std::size_t>(header.d);
    const auto h = static_cast<std::size_t>(header.h);
    SemanticDecomposer s;
    s.input_dim_ = static_cast<int>(header.d);
    s.branch_dim_ = static_cast<int>(header.h);
    s.seed_ = header.seed;
    s.lift_ = lift_matrix(s.branch_dim_, s.input_dim_, s.seed_);
    if (header.mode == static_cast<std::uint32_t>(DecomposerMode::analytic)) {
        s.mode_ = DecomposerMode::analytic;
        auto blocks = read_weights_file(path, header, {d});
        s.prompt_unit_ = std::move(blocks[0]);
        const double n = norm(s.prompt_unit_);
        if (n == 0.0) throw IoError("decomposer load: zero prompt direction");
        for (auto& v : s.prompt_unit_) v /= n;
        s.lift_prompt_ = matvec(s.lift_, s.prompt_unit_);
    } else if (header.mode == static_cast<std::uint32_t>(DecomposerMode::learned)) {
        s.mode_ = DecomposerMode::learned;
        const std::vector<std::size_t> sizes = {h * d, h, h, h, h * h, h, h * d, h, h, h, h * h, h};
        auto blocks = read_weights_file(path, header, sizes);
        auto fill = [&](Branch& b, int base) {
            b.w1 = Matrix(static_cast<int>(h), static_cast<int>(d));
            b.w1.a = std::move(blocks[base + 0]);
            b.b1 = std::move(blocks[base + 1]);
            b.mu = std::move(blocks[base + 2]);
            b.var = std::move(blocks[base + 3]);
            b.w2 = Matrix(static_cast<int>(h), static_cast<int>(h));
            b.w2.a = std::move(blocks[base + 4]);
            b.b2 = std::move(blocks[base + 5]);
        };
        fill(s.common_, 0);
        fill(s.distinctive_, 6);
    } else {
        throw IoError("decomposer load: unknown mode " + std::to_string(header.mode));
    }
    return s;
}

}  // namespace trap
