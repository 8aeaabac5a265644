// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trap/baselines.hpp"
#include "trap/optimizer.hpp"

namespace trap {

struct RunConfig {
    std::string output_dir = "runs";
    std::string run_id = "run";
    std::uint64_t seed = 7;
    int workers = 1;
    bool save_candidates = false;  // persist intermediate decodes as PNG
};

struct DatasetConfig {
    std::string manifest;
    std::string images_dir;  // empty: directory of the manifest
    int count = 20;
    int n = 4;
};

struct BackendConfig {
    // embedder
    std::string embedder_kind = "toy";  // toy | remote
    int embedder_dim = 64;
    std::uint64_t embedder_seed = 17;
    std::string embedder_endpoint;
    int remote_embedder_dim = 512;
    std::string embedder_token;

    // decomposer
    std::string decomposer_mode = "analytic";  // analytic | learned
    int branch_dim = 0;  // 0: twice the embedder width (512 -> 1024)
    std::uint64_t lift_seed = 23;
    std::string decomposer_weights;  // learned-mode weights file

    // layout
    std::uint64_t layout_seed = 29;
    int layout_input_width = 0;  // 0 -> 3 * embedder dim

    // segmenter
    std::string segmenter_kind = "box";  // box | otsu
    double segment_fraction = 0.6;

    // perceptual metric
    std::string metric_kind = "toy";  // toy | remote
    std::string metric_endpoint;
    std::string metric_token;

    // decoder
    std::string decoder_kind = "toy";  // toy | remote
    double decoder_gain = 4.0;
    std::string decoder_endpoint;
    std::string decoder_token;
    int decoder_token_count = 77;
    int decoder_token_dim = 1024;
    int decoder_permits = 1;
};

struct AgentConfig {
    std::string kind = "surrogate";  // surrogate | remote
    std::string endpoint;
    std::string token;
    double temperature = 0.0;
    int parallelism = 1;
    int retries = 2;
    int timeout_ms = 30000;
};

struct EvalConfig {
    int trials = 100;  // R
    int common_height = 512;
    int separator_px = 8;
    std::string template_id = "default";
    double noise_sigma = 0.0;  // > 0 turns the noise defense on
};

struct BootstrapStageConfig {
    int max_attempts = 5;
    double base_strength = 0.4;
    double strength_increment = 0.1;
    double cfg = 7.5;
};

struct AblationConfig {
    std::vector<double> temperatures = {0.0, 0.3, 0.7, 1.0};
    std::vector<double> threshold_epsilons = {0.0, 0.05, 0.1, 0.2, 0.35};
    std::vector<std::string> templates = {"default", "v1", "v2", "v3", "v4"};
    std::vector<std::string> methods = {"trap", "noopt"};  // sweeps re-evaluate these
};

struct ExperimentConfig {
    RunConfig run;
    DatasetConfig dataset;
    BackendConfig backends;
    AgentConfig agent;
    TrapConfig trap;
    PerturbationBudget baseline_budget;
    std::string baseline_oracle = "surrogate";  // surrogate | agent-frequency
    int baseline_oracle_trials = 20;            // R' for agent-frequency mode
    EvalConfig eval;
    BootstrapStageConfig bootstrap;
    AblationConfig ablations;
    std::vector<std::string> methods = {"initial", "trap", "spsa", "bandit", "noopt"};
    std::string textgen_kind = "template";  // template | remote
    std::string textgen_endpoint;
    std::string textgen_token;

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    /// Environment variables override adapter endpoints and credentials
    /// only: TRAP_AGENT_ENDPOINT, TRAP_AGENT_TOKEN, TRAP_EMBEDDER_ENDPOINT,
    /// TRAP_EMBEDDER_TOKEN, TRAP_DECODER_ENDPOINT, TRAP_DECODER_TOKEN,
    /// TRAP_METRIC_ENDPOINT, TRAP_METRIC_TOKEN, TRAP_TEXTGEN_ENDPOINT,
    /// TRAP_TEXTGEN_TOKEN.
    void apply_env_overrides();

    void validate() const;
};

}  // namespace trap
