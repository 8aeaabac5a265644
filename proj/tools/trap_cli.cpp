// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>

#include "trap/pipeline.hpp"
#include "trap/util.hpp"

namespace {

trap::ExperimentConfig load_config(const std::string& path) {
    trap::ExperimentConfig config = trap::ExperimentConfig::from_json_file(path);
    config.apply_env_overrides();
    return config;
}

void print_summary(const trap::ExperimentReport& report) {
    std::printf("run %s  (n=%d, threshold=%.3f, completeness %.0f%%)\n", report.run_id.c_str(), report.n,
                report.threshold, 100.0 * report.completeness);
    std::printf("%-10s %10s %8s %8s\n", "method", "instances", "ASR", "mean P");
    for (const auto& m : report.methods)
        std::printf("%-10s %10d %8.3f %8.3f\n", m.method.c_str(), m.instances, m.asr, m.mean_p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic-injection attack framework for multimodal selection agents"};
    app.require_subcommand(1);

    std::string config_path;
    std::string method = "all";
    std::string synth_dir = "dataset";
    int synth_count = 40;
    int synth_size = 64;
    std::uint64_t synth_seed = 1;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "Experiment config JSON")->required();
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic PNG dataset with captions");
    synth->add_option("-o,--out", synth_dir, "Output directory");
    synth->add_option("--count", synth_count, "Number of images");
    synth->add_option("--size", synth_size, "Image side length in pixels");
    synth->add_option("--seed", synth_seed, "Generator seed");

    CLI::App* bootstrap = app.add_subcommand("bootstrap", "Sample instances and generate verified bad images");
    add_config(bootstrap);
    CLI::App* attack = app.add_subcommand("attack", "Run the semantic-injection attack on bootstrapped instances");
    add_config(attack);
    CLI::App* baseline = app.add_subcommand("baseline", "Run a comparison attack (spsa | bandit | noopt)");
    add_config(baseline);
    baseline->add_option("-m,--method", method, "spsa, bandit, noopt or all")->required();
    CLI::App* evaluate = app.add_subcommand("evaluate", "Estimate selection probabilities for stored attack images");
    add_config(evaluate);
    CLI::App* ablate = app.add_subcommand("ablate", "Re-evaluate under temperature and prompt-template sweeps");
    add_config(ablate);
    CLI::App* report = app.add_subcommand("report", "Rebuild report.json, tables and plots from estimates.jsonl");
    add_config(report);
    CLI::App* run = app.add_subcommand("run", "Full pipeline: bootstrap, attacks, evaluation, ablations, report");
    add_config(run);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            trap::generate_synthetic_dataset(synth_dir, synth_count, synth_size, synth_seed);
            std::printf("wrote %d images and captions.json under %s\n", synth_count, synth_dir.c_str());
            return 0;
        }
        const trap::ExperimentConfig config = load_config(config_path);
        namespace fs = std::filesystem;

        if (bootstrap->parsed()) {
            const auto specs = trap::stage_bootstrap(config);
            int accepted = 0, excluded = 0;
            for (const auto& s : specs) {
                if (s.bootstrap == trap::InstanceSpec::Bootstrap::accepted) ++accepted;
                if (s.bootstrap == trap::InstanceSpec::Bootstrap::excluded) ++excluded;
            }
            std::printf("bootstrap complete: %d accepted, %d excluded\n", accepted, excluded);
            return 0;
        }
        if (attack->parsed() || baseline->parsed()) {
            const std::string chosen = attack->parsed() ? "trap" : method;
            if (baseline->parsed() && chosen != "spsa" && chosen != "bandit" && chosen != "noopt" && chosen != "all") {
                std::cerr << "unknown baseline method '" << chosen << "'\n";
                return 1;
            }
            trap::stage_attack(config, chosen);
            if (attack->parsed()) {
                // Exit status: 0 when every attacked instance reached the
                // selection threshold, 2 when any exhausted its budget.
                bool all_reached = true;
                for (const auto& spec : trap::read_instances_json(
                         (fs::path(trap::run_directory(config)) / "instances.json").string())) {
                    if (spec.bootstrap != trap::InstanceSpec::Bootstrap::accepted) continue;
                    const fs::path result = fs::path(trap::run_directory(config)) / "instances" / spec.id / "trap" /
                                            "result.json";
                    if (!fs::exists(result)) continue;
                    const auto text = trap::read_text_file(result.string());
                    if (text.find("\"threshold_reached\"") == std::string::npos) all_reached = false;
                }
                std::printf("attack complete (%s)\n", all_reached ? "all instances reached threshold"
                                                                  : "some instances exhausted their budget");
                return all_reached ? 0 : 2;
            }
            std::printf("baseline '%s' complete\n", chosen.c_str());
            return 0;
        }
        if (evaluate->parsed() || ablate->parsed()) {
            auto rows = trap::stage_evaluate(config);
            if (ablate->parsed()) {
                auto ablation_rows = trap::stage_ablate(config);
                rows.insert(rows.end(), ablation_rows.begin(), ablation_rows.end());
            }
            // Persist so `trap report` can aggregate.
            std::string jsonl;
            for (const auto& row : rows) {
                nlohmann::json j{{"instance", row.instance},
                                 {"method", row.method},
                                 {"context", row.context},
                                 {"trials", row.estimate.trials},
                                 {"wins", row.estimate.wins},
                                 {"per_position_placed", row.estimate.per_position_placed},
                                 {"per_position_wins", row.estimate.per_position_wins},
                                 {"unparseable", row.estimate.unparseable},
                                 {"p_adv", row.estimate.p_adv},
                                 {"valid", row.estimate.valid}};
                jsonl += j.dump() + "\n";
            }
            trap::write_text_file((fs::path(trap::run_directory(config)) / "estimates.jsonl").string(), jsonl);
            std::printf("wrote %zu estimate rows\n", rows.size());
            return 0;
        }
        if (report->parsed()) {
            print_summary(trap::stage_report(config));
            return 0;
        }
        if (run->parsed()) {
            print_summary(trap::run_experiment(config));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
