// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trap/config.hpp"
#include "trap/harness.hpp"
#include "trap/optimizer.hpp"

namespace trap {

/// One evaluation instance of the protocol.
struct InstanceSpec {
    enum class Bootstrap { pending, accepted, excluded };

    std::string id;
    std::string target_path;
    std::string caption;  // positive prompt
    std::string negative_prompt;
    std::vector<std::string> competitor_paths;  // exactly n-1
    std::string bad_image_path;                 // set once bootstrapped
    Bootstrap bootstrap = Bootstrap::pending;
    double initial_p = -1.0;
    int bootstrap_attempts = 0;
    bool negative_prompt_fallback = false;  // offline engine was used after a textgen outage
};

/// Deterministic seeded sample of `count` image-caption pairs from a
/// caption-annotation manifest (the standard {"images": [...],
/// "annotations": [...]} layout). Competitors are n-1 distinct other images
/// of the same dataset; an image is never its own competitor.
std::vector<InstanceSpec> load_instances(const std::string& manifest_path, int count, int n, std::uint64_t seed,
                                         const std::string& images_dir = "");

/// Text-generation client used for negative prompts.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::string generate(const std::string& prompt) = 0;
};

/// Offline engine: fixed degradation template over the caption's head noun.
class TemplateTextGenerator final : public TextGenerator {
public:
    std::string generate(const std::string& prompt) override;
};

/// HTTP client: POST /generate {"prompt"} -> {"text"}.
class RemoteTextGenerator final : public TextGenerator {
public:
    struct Options {
        HttpOptions http;
        std::string path = "/generate";
    };
    explicit RemoteTextGenerator(Options options) : options_(std::move(options)) {}
    std::string generate(const std::string& prompt) override;

private:
    Options options_;
};

/// Head noun of the caption: first token after leading articles that is not
/// a known qualifier (color / size / quality adjectives).
std::string extract_subject(const std::string& caption);

/// Degradation prompt for the caption subject. A remote generator is used
/// when provided; outages fall back to the offline template engine and set
/// *used_fallback.
std::string generate_negative_prompt(const std::string& caption, TextGenerator* textgen = nullptr,
                                     bool* used_fallback = nullptr);

/// Prompt-independent backend bundle built from the experiment config, plus
/// factories for the per-prompt pieces.
struct ExperimentStack {
    std::shared_ptr<const ToyEmbedder> toy_embedder;  // set for the toy backend
    std::unique_ptr<Embedder> owned_embedder;
    const Embedder* embedder = nullptr;

    std::unique_ptr<LayoutGenerator> layout;
    std::unique_ptr<Segmenter> segmenter;
    std::unique_ptr<PerceptualMetric> metric;
    std::unique_ptr<DiffusionDecoder> decoder;

    std::function<SemanticDecomposer(const Embedding& prompt)> make_decomposer;
    std::function<std::unique_ptr<AgentAdapter>(const std::string& prompt, double temperature)> make_agent;

    /// Attack wiring for one instance (agent owned by the caller).
    AttackStack attack_view(AgentAdapter& agent, const TrialOptions& options) const;
};

ExperimentStack build_stack(const ExperimentConfig& config);

/// Trial options for one instance at the configured evaluation settings.
TrialOptions make_trial_options(const ExperimentConfig& config, const std::string& caption);

struct BootstrapOutcome {
    InstanceSpec spec;
    ImageTensor bad_image;  // valid when accepted
};

/// Generates the degraded target via the decoder conditioned on the
/// negative prompt, verifies the initial selection probability with
/// run_trials, and retries with increased strength up to the configured
/// attempt limit until P < threshold. Failure marks the instance excluded.
BootstrapOutcome bootstrap_bad_image(const InstanceSpec& spec, const ExperimentStack& stack,
                                     const ExperimentConfig& config);

/// One line of estimates.jsonl.
struct EstimateRow {
    std::string instance;
    std::string method;
    std::string context;  // "main", "temp:<t>", "template:<id>"
    SelectionEstimate estimate;
};

struct MethodSummary {
    std::string method;
    int instances = 0;
    double asr = 0.0;
    double mean_p = 0.0;
};

struct SweepPoint {
    std::string method;
    double x = 0.0;
    std::string label;
    double asr = 0.0;
};

struct ExperimentReport {
    std::string run_id;
    int n = 4;
    double threshold = 0.25;
    int requested_instances = 0;  // dataset sample size
    int accepted_instances = 0;   // instances that survived the bootstrap
    int planned = 0;              // accepted instances x enabled methods
    int completed = 0;            // main evaluations present
    double completeness = 1.0;
    std::vector<MethodSummary> methods;
    std::vector<SweepPoint> temperature_sweep;
    std::vector<SweepPoint> threshold_sweep;
    std::vector<SweepPoint> template_sweep;

    const MethodSummary* find(const std::string& method) const;
};

/// Full orchestration: instances + bootstrap, attacks for every enabled
/// method, uniform evaluation, ablation sweeps, persistence (estimates,
/// report, tables, plots). Completed per-instance artifacts are skipped on
/// rerun, so the call is resume-safe and idempotent.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Stage entry points used by the command line tool.
std::vector<InstanceSpec> stage_bootstrap(const ExperimentConfig& config);
void stage_attack(const ExperimentConfig& config, const std::string& method);
std::vector<EstimateRow> stage_evaluate(const ExperimentConfig& config);
std::vector<EstimateRow> stage_ablate(const ExperimentConfig& config);
ExperimentReport stage_report(const ExperimentConfig& config);

/// Rebuilds the report from estimate rows. accepted_instances < 0 derives
/// the count from the distinct instances present in the rows.
ExperimentReport report_from_estimates(const ExperimentConfig& config, const std::vector<EstimateRow>& rows,
                                       int accepted_instances = -1);

std::vector<EstimateRow> read_estimates_jsonl(const std::string& path);
std::string run_directory(const ExperimentConfig& config);
std::vector<InstanceSpec> read_instances_json(const std::string& path);

/// Synthetic PNG dataset in the caption-annotation manifest layout (offline
/// fixtures and demos; images are seeded gradients with random shapes).
void generate_synthetic_dataset(const std::string& out_dir, int image_count, int image_size, std::uint64_t seed);

}  // namespace trap
