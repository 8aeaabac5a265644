// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <optional>

#include "trap/error.hpp"
#include "trap/util.hpp"

namespace trap {

namespace {

using nlohmann::json;

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json trap_to_json(const TrapConfig& c) {
    return json{{"lambda1", c.loss_weights.lambda1},
                {"lambda2", c.loss_weights.lambda2},
                {"lambda3", c.loss_weights.lambda3},
                {"outer_iterations", c.outer_iterations},
                {"inner_steps", c.inner_steps},
                {"learning_rate", c.learning_rate},
                {"candidate_count", c.candidate_count},
                {"trials_per_eval", c.trials_per_eval},
                {"threshold", c.threshold},
                {"strength_grid", c.strength_grid},
                {"cfg_grid", c.cfg_grid},
                {"seed", c.seed},
                {"lpips_accept_bound", c.lpips_accept_bound},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_epsilon", c.adam_epsilon}};
}

void trap_from_json(const json& j, TrapConfig& c) {
    get_if(j, "lambda1", c.loss_weights.lambda1);
    get_if(j, "lambda2", c.loss_weights.lambda2);
    get_if(j, "lambda3", c.loss_weights.lambda3);
    get_if(j, "outer_iterations", c.outer_iterations);
    get_if(j, "inner_steps", c.inner_steps);
    get_if(j, "learning_rate", c.learning_rate);
    get_if(j, "candidate_count", c.candidate_count);
    get_if(j, "trials_per_eval", c.trials_per_eval);
    get_if(j, "threshold", c.threshold);
    get_if(j, "strength_grid", c.strength_grid);
    get_if(j, "cfg_grid", c.cfg_grid);
    get_if(j, "seed", c.seed);
    get_if(j, "lpips_accept_bound", c.lpips_accept_bound);
    get_if(j, "adam_beta1", c.adam_beta1);
    get_if(j, "adam_beta2", c.adam_beta2);
    get_if(j, "adam_epsilon", c.adam_epsilon);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    return from_json_text(read_text_file(path));
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig c;
    if (j.contains("run")) {
        const auto& r = j["run"];
        get_if(r, "output_dir", c.run.output_dir);
        get_if(r, "run_id", c.run.run_id);
        get_if(r, "seed", c.run.seed);
        get_if(r, "workers", c.run.workers);
        get_if(r, "save_candidates", c.run.save_candidates);
    }
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        get_if(d, "manifest", c.dataset.manifest);
        get_if(d, "images_dir", c.dataset.images_dir);
        get_if(d, "count", c.dataset.count);
        get_if(d, "n", c.dataset.n);
    }
    if (j.contains("backends")) {
        const auto& b = j["backends"];
        get_if(b, "embedder_kind", c.backends.embedder_kind);
        get_if(b, "embedder_dim", c.backends.embedder_dim);
        get_if(b, "embedder_seed", c.backends.embedder_seed);
        get_if(b, "embedder_endpoint", c.backends.embedder_endpoint);
        get_if(b, "remote_embedder_dim", c.backends.remote_embedder_dim);
        get_if(b, "decomposer_mode", c.backends.decomposer_mode);
        get_if(b, "branch_dim", c.backends.branch_dim);
        get_if(b, "lift_seed", c.backends.lift_seed);
        get_if(b, "decomposer_weights", c.backends.decomposer_weights);
        get_if(b, "layout_seed", c.backends.layout_seed);
        get_if(b, "layout_input_width", c.backends.layout_input_width);
        get_if(b, "segmenter_kind", c.backends.segmenter_kind);
        get_if(b, "segment_fraction", c.backends.segment_fraction);
        get_if(b, "metric_kind", c.backends.metric_kind);
        get_if(b, "metric_endpoint", c.backends.metric_endpoint);
        get_if(b, "decoder_kind", c.backends.decoder_kind);
        get_if(b, "decoder_gain", c.backends.decoder_gain);
        get_if(b, "decoder_endpoint", c.backends.decoder_endpoint);
        get_if(b, "decoder_token_count", c.backends.decoder_token_count);
        get_if(b, "decoder_token_dim", c.backends.decoder_token_dim);
        get_if(b, "decoder_permits", c.backends.decoder_permits);
    }
    if (j.contains("agent")) {
        const auto& a = j["agent"];
        get_if(a, "kind", c.agent.kind);
        get_if(a, "endpoint", c.agent.endpoint);
        get_if(a, "token", c.agent.token);
        get_if(a, "temperature", c.agent.temperature);
        get_if(a, "parallelism", c.agent.parallelism);
        get_if(a, "retries", c.agent.retries);
        get_if(a, "timeout_ms", c.agent.timeout_ms);
    }
    if (j.contains("trap")) trap_from_json(j["trap"], c.trap);
    if (j.contains("baselines")) {
        const auto& b = j["baselines"];
        get_if(b, "epsilon", c.baseline_budget.epsilon);
        get_if(b, "query_budget", c.baseline_budget.query_budget);
        get_if(b, "step_size", c.baseline_budget.step_size);
        get_if(b, "spsa_c", c.baseline_budget.spsa_c);
        get_if(b, "samples_per_step", c.baseline_budget.samples_per_step);
        get_if(b, "oracle", c.baseline_oracle);
        get_if(b, "oracle_trials", c.baseline_oracle_trials);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        get_if(e, "trials", c.eval.trials);
        get_if(e, "common_height", c.eval.common_height);
        get_if(e, "separator_px", c.eval.separator_px);
        get_if(e, "template_id", c.eval.template_id);
        get_if(e, "noise_sigma", c.eval.noise_sigma);
    }
    if (j.contains("bootstrap")) {
        const auto& b = j["bootstrap"];
        get_if(b, "max_attempts", c.bootstrap.max_attempts);
        get_if(b, "base_strength", c.bootstrap.base_strength);
        get_if(b, "strength_increment", c.bootstrap.strength_increment);
        get_if(b, "cfg", c.bootstrap.cfg);
    }
    if (j.contains("ablations")) {
        const auto& a = j["ablations"];
        get_if(a, "temperatures", c.ablations.temperatures);
        get_if(a, "threshold_epsilons", c.ablations.threshold_epsilons);
        get_if(a, "templates", c.ablations.templates);
        get_if(a, "methods", c.ablations.methods);
    }
    get_if(j, "methods", c.methods);
    if (j.contains("textgen")) {
        const auto& t = j["textgen"];
        get_if(t, "kind", c.textgen_kind);
        get_if(t, "endpoint", c.textgen_endpoint);
        get_if(t, "token", c.textgen_token);
    }
    return c;
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["run"] = {{"output_dir", run.output_dir},
                {"run_id", run.run_id},
                {"seed", run.seed},
                {"workers", run.workers},
                {"save_candidates", run.save_candidates}};
    j["dataset"] = {{"manifest", dataset.manifest},
                    {"images_dir", dataset.images_dir},
                    {"count", dataset.count},
                    {"n", dataset.n}};
    j["backends"] = {{"embedder_kind", backends.embedder_kind},
                     {"embedder_dim", backends.embedder_dim},
                     {"embedder_seed", backends.embedder_seed},
                     {"embedder_endpoint", backends.embedder_endpoint},
                     {"remote_embedder_dim", backends.remote_embedder_dim},
                     {"decomposer_mode", backends.decomposer_mode},
                     {"branch_dim", backends.branch_dim},
                     {"lift_seed", backends.lift_seed},
                     {"decomposer_weights", backends.decomposer_weights},
                     {"layout_seed", backends.layout_seed},
                     {"layout_input_width", backends.layout_input_width},
                     {"segmenter_kind", backends.segmenter_kind},
                     {"segment_fraction", backends.segment_fraction},
                     {"metric_kind", backends.metric_kind},
                     {"metric_endpoint", backends.metric_endpoint},
                     {"decoder_kind", backends.decoder_kind},
                     {"decoder_gain", backends.decoder_gain},
                     {"decoder_endpoint", backends.decoder_endpoint},
                     {"decoder_token_count", backends.decoder_token_count},
                     {"decoder_token_dim", backends.decoder_token_dim},
                     {"decoder_permits", backends.decoder_permits}};
    j["agent"] = {{"kind", agent.kind},       {"endpoint", agent.endpoint},       {"token", agent.token},
                  {"temperature", agent.temperature}, {"parallelism", agent.parallelism}, {"retries", agent.retries},
                  {"timeout_ms", agent.timeout_ms}};
    j["trap"] = trap_to_json(trap);
    j["baselines"] = {{"epsilon", baseline_budget.epsilon},
                      {"query_budget", baseline_budget.query_budget},
                      {"step_size", baseline_budget.step_size},
                      {"spsa_c", baseline_budget.spsa_c},
                      {"samples_per_step", baseline_budget.samples_per_step},
                      {"oracle", baseline_oracle},
                      {"oracle_trials", baseline_oracle_trials}};
    j["eval"] = {{"trials", eval.trials},
                 {"common_height", eval.common_height},
                 {"separator_px", eval.separator_px},
                 {"template_id", eval.template_id},
                 {"noise_sigma", eval.noise_sigma}};
    j["bootstrap"] = {{"max_attempts", bootstrap.max_attempts},
                      {"base_strength", bootstrap.base_strength},
                      {"strength_increment", bootstrap.strength_increment},
                      {"cfg", bootstrap.cfg}};
    j["ablations"] = {{"temperatures", ablations.temperatures},
                      {"threshold_epsilons", ablations.threshold_epsilons},
                      {"templates", ablations.templates},
                      {"methods", ablations.methods}};
    j["methods"] = methods;
    j["textgen"] = {{"kind", textgen_kind}, {"endpoint", textgen_endpoint}, {"token", textgen_token}};
    return j.dump(2) + "\n";
}

void ExperimentConfig::apply_env_overrides() {
    auto env = [](const char* name) -> std::optional<std::string> {
        const char* v = std::getenv(name);
        if (v && *v) return std::string(v);
        return std::nullopt;
    };
    if (auto v = env("TRAP_AGENT_ENDPOINT")) agent.endpoint = *v;
    if (auto v = env("TRAP_AGENT_TOKEN")) agent.token = *v;
    if (auto v = env("TRAP_EMBEDDER_ENDPOINT")) backends.embedder_endpoint = *v;
    if (auto v = env("TRAP_EMBEDDER_TOKEN")) backends.embedder_token = *v;
    if (auto v = env("TRAP_DECODER_ENDPOINT")) backends.decoder_endpoint = *v;
    if (auto v = env("TRAP_DECODER_TOKEN")) backends.decoder_token = *v;
    if (auto v = env("TRAP_METRIC_ENDPOINT")) backends.metric_endpoint = *v;
    if (auto v = env("TRAP_METRIC_TOKEN")) backends.metric_token = *v;
    if (auto v = env("TRAP_TEXTGEN_ENDPOINT")) textgen_endpoint = *v;
    if (auto v = env("TRAP_TEXTGEN_TOKEN")) textgen_token = *v;
}

void ExperimentConfig::validate() const {
    trap.validate();
    baseline_budget.validate();
    if (dataset.n < 2) throw Error("config: dataset n must be >= 2");
    if (dataset.n != trap.candidate_count)
        throw Error("config: dataset.n and trap.candidate_count must agree");
    if (run.run_id.empty() || run.output_dir.empty()) throw Error("config: run id and output dir required");
    if (run.workers < 1) throw Error("config: workers must be >= 1");
    if (eval.trials < 1) throw Error("config: eval trials must be >= 1");
    if (bootstrap.max_attempts < 1) throw Error("config: bootstrap attempts must be >= 1");
    for (const auto& m : methods)
        if (m != "initial" && m != "trap" && m != "spsa" && m != "bandit" && m != "noopt")
            throw Error("config: unknown method '" + m + "'");
}

}  // namespace trap
