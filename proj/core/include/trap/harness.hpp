// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trap/embedding.hpp"
#include "trap/http.hpp"
#include "trap/image.hpp"

namespace trap {

/// Black-box selection agent. Adapters never mutate their inputs; choose()
/// must be safe for concurrent invocation up to safe_parallelism() calls.
class AgentAdapter {
public:
    virtual ~AgentAdapter() = default;
    virtual const std::string& name() const = 0;
    virtual int safe_parallelism() const { return 1; }
    virtual double temperature() const { return 0.0; }
    virtual void set_temperature(double) {}
    virtual std::string choose(const ImageTensor& composite, const std::string& instruction) = 0;
};

/// Per-instance evaluation tallies.
struct SelectionEstimate {
    int trials = 0;  // R
    int wins = 0;
    std::vector<int> per_position_placed;  // which slot hosted the adversarial image
    std::vector<int> per_position_wins;
    int unparseable = 0;
    double p_adv = 0.0;
    bool valid = true;  // false when the adapter failed before R trials completed
};

struct TrialOptions {
    int common_height = 512;
    int separator_px = 8;
    std::string template_id = "default";
    std::string task = "Select the most desirable image";
    double noise_sigma = 0.0;           // > 0 enables the noise defense
    std::uint64_t noise_seed = 0;
};

enum class TrialScheme { randomized, stratified };

/// Horizontal concatenation with a white separator gutter. Images are
/// resized to a common height preserving aspect ratio; slot k left-to-right
/// holds images[order[k]].
ImageTensor compose_trial(const std::vector<ImageTensor>& images, const std::vector<int>& order,
                          int common_height = 512, int separator_px = 8);

/// Recovers the equal-width slot images of a composite.
std::vector<ImageTensor> split_composite(const ImageTensor& composite, int n, int separator_px = 8);

/// R independent n-way trials with fresh uniform random slot permutations
/// (stratified: all n! permutations cycled in lexicographic order, R must be
/// a multiple of n!). Unparseable responses count as non-selection. If the
/// adapter fails after its configured retries the partial estimate is
/// returned with valid == false.
SelectionEstimate run_trials(const ImageTensor& x_adv, const std::vector<ImageTensor>& competitors,
                             AgentAdapter& agent, int trials, int n, std::uint64_t seed,
                             const TrialOptions& options = {}, TrialScheme scheme = TrialScheme::randomized);

/// First candidate designator in the response: a number 1..n or an ordinal
/// word, case-insensitive. nullopt when none is found.
std::optional<int> parse_choice(const std::string& response, int n);

/// Fraction of estimates whose selection probability strictly exceeds the
/// threshold.
double compute_asr(const std::vector<SelectionEstimate>& estimates, double threshold);

/// Seeded Gaussian pixel noise, clamped to [0, 1].
ImageTensor apply_noise_defense(const ImageTensor& image, double sigma, std::uint64_t seed);

/// Registered instruction templates (the prompt-variant ablation registry).
/// Placeholders {n} and {task}.
const std::vector<std::string>& instruction_template_ids();
std::string render_instruction(const std::string& template_id, int n, const std::string& task);

/// Deterministic stand-in agent: splits the composite, embeds every slot,
/// and answers the slot with maximal cosine similarity to the prompt
/// embedding; ties break to the lowest slot index.
class SurrogateArgmaxAgent final : public AgentAdapter {
public:
    SurrogateArgmaxAgent(const Embedder& embedder, std::string prompt, int n, int separator_px = 8);

    const std::string& name() const override { return name_; }
    int safe_parallelism() const override { return 4; }
    std::string choose(const ImageTensor& composite, const std::string& instruction) override;

    /// Slot scores for one composite (exposed so tests can re-derive the
    /// argmax independently).
    std::vector<double> slot_scores(const ImageTensor& composite) const;

private:
    const Embedder* embedder_;
    std::string prompt_;
    Embedding prompt_embedding_;
    int n_;
    int separator_px_;
    std::string name_ = "surrogate-argmax";
};

/// Position-biased scripted agent (ignores content); evaluation plumbing
/// tests use it to check that shuffling neutralizes position.
class FixedSlotAgent final : public AgentAdapter {
public:
    explicit FixedSlotAgent(int slot) : slot_(slot) {}
    const std::string& name() const override { return name_; }
    int safe_parallelism() const override { return 8; }
    std::string choose(const ImageTensor&, const std::string&) override { return std::to_string(slot_); }

private:
    int slot_;
    std::string name_ = "fixed-slot";
};

/// HTTP adapter for a remote multimodal model.
/// POST /choose {"image_png_base64", "instruction", "temperature"} -> {"text"}
class RemoteAgentAdapter final : public AgentAdapter {
public:
    struct Options {
        HttpOptions http;
        std::string path = "/choose";
        std::string name = "remote-agent";
        int parallelism = 1;
        double temperature = 0.0;
        std::string system_prompt_id = "default";
    };

    explicit RemoteAgentAdapter(Options options);

    const std::string& name() const override { return options_.name; }
    int safe_parallelism() const override { return options_.parallelism; }
    double temperature() const override { return temperature_; }
    void set_temperature(double t) override { temperature_ = t; }
    std::string choose(const ImageTensor& composite, const std::string& instruction) override;

private:
    Options options_;
    double temperature_;
};

}  // namespace trap
