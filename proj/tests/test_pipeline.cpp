// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "test_support.hpp"
#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/pipeline.hpp"
#include "trap/util.hpp"

using namespace trap;
namespace fs = std::filesystem;

namespace {

ExperimentConfig toy_experiment_config(const std::string& workdir, int instances = 4) {
    ExperimentConfig c;
    c.run.output_dir = workdir + "/runs";
    c.run.run_id = "toy";
    c.run.seed = 11;
    c.dataset.manifest = workdir + "/dataset/captions.json";
    c.dataset.count = instances;
    c.dataset.n = 4;
    c.backends.embedder_dim = 16;
    c.backends.branch_dim = 32;
    c.backends.decoder_gain = 4.0;
    c.trap.outer_iterations = 2;
    c.trap.inner_steps = 6;
    c.trap.learning_rate = 0.05;
    c.trap.candidate_count = 4;
    c.trap.trials_per_eval = 8;
    c.trap.strength_grid = {0.6};
    c.trap.cfg_grid = {7.5};
    c.baseline_budget.query_budget = 64;
    c.eval.trials = 8;
    c.eval.common_height = 32;
    c.eval.separator_px = 8;
    c.ablations.temperatures = {0.0, 0.7};
    c.ablations.templates = {"default", "v1"};
    c.ablations.threshold_epsilons = {0.0, 0.1, 0.35};
    return c;
}

void make_dataset(const std::string& workdir, int count = 12, int size = 32, std::uint64_t seed = 3) {
    generate_synthetic_dataset(workdir + "/dataset", count, size, seed);
}

}  // namespace

TEST_CASE("subject extraction and the offline negative prompt") {
    CHECK(extract_subject("a red apple on a table") == "apple");
    CHECK(extract_subject("The small wooden teapot") == "teapot");
    CHECK(extract_subject("bicycle") == "bicycle");
    CHECK_THROWS_AS(extract_subject(""), Error);

    CHECK(generate_negative_prompt("a red apple on a table") == "low quality, blurry, unappealing apple");
    bool fallback = true;
    CHECK(generate_negative_prompt("a blue lantern", nullptr, &fallback) ==
          "low quality, blurry, unappealing lantern");
    CHECK_FALSE(fallback);  // no remote generator means no outage either
    CHECK_THROWS_AS(generate_negative_prompt(""), Error);
}

TEST_CASE("negative prompt falls back to the template engine on outage") {
    struct DeadGenerator final : TextGenerator {
        std::string generate(const std::string&) override { throw AdapterError("down"); }
    } dead;
    bool fallback = false;
    const std::string prompt = generate_negative_prompt("a green cactus in a garden", &dead, &fallback);
    CHECK(prompt == "low quality, blurry, unappealing cactus");
    CHECK(fallback);
}

TEST_CASE("synthetic dataset and instance loading") {
    testing::TempDir dir("pipeline_dataset");
    make_dataset(dir.str(), 12, 32);
    REQUIRE(fs::exists(dir.str() + "/dataset/captions.json"));

    const auto specs = load_instances(dir.str() + "/dataset/captions.json", 5, 4, 7);
    REQUIRE(specs.size() == 5);
    std::set<std::string> ids;
    for (const auto& s : specs) {
        CHECK(s.competitor_paths.size() == 3);
        CHECK_FALSE(s.caption.empty());
        CHECK(fs::exists(s.target_path));
        for (const auto& c : s.competitor_paths) {
            CHECK(fs::exists(c));
            CHECK(c != s.target_path);  // never its own competitor
        }
        ids.insert(s.id);
    }
    CHECK(ids.size() == 5);

    CHECK(load_instances(dir.str() + "/dataset/captions.json", 0, 4, 7).empty());
    const auto again = load_instances(dir.str() + "/dataset/captions.json", 5, 4, 7);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        CHECK(specs[i].id == again[i].id);
        CHECK(specs[i].competitor_paths == again[i].competitor_paths);
    }
    CHECK_THROWS_AS(load_instances(dir.str() + "/dataset/captions.json", 100, 4, 7), Error);
    CHECK_THROWS_AS(load_instances(dir.str() + "/missing.json", 5, 4, 7), IoError);
}

TEST_CASE("instance sampling never assigns an image as its own competitor") {
    testing::TempDir dir("pipeline_self");
    make_dataset(dir.str(), 8, 32);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto specs = load_instances(dir.str() + "/dataset/captions.json", 6, 4, seed);
        for (const auto& s : specs)
            for (const auto& c : s.competitor_paths) CHECK(c != s.target_path);
    }
}

TEST_CASE("bootstrap accepts immediately when the agent never picks the bad image") {
    testing::TempDir dir("pipeline_boot_accept");
    make_dataset(dir.str(), 8, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 2);
    ExperimentStack stack = build_stack(config);

    auto specs = load_instances(config.dataset.manifest, 1, 4, config.run.seed);
    auto& spec = specs.front();
    spec.negative_prompt = generate_negative_prompt(spec.caption);

    std::vector<ImageTensor> competitors;
    for (const auto& p : spec.competitor_paths) competitors.push_back(read_png(p));
    stack.make_agent = [&, competitors](const std::string&, double) {
        return std::unique_ptr<AgentAdapter>(
            new testing::KnownSlotAgent(competitors, config.dataset.n, config.eval.common_height,
                                        config.eval.separator_px));
    };
    const BootstrapOutcome outcome = bootstrap_bad_image(spec, stack, config);
    CHECK(outcome.spec.bootstrap == InstanceSpec::Bootstrap::accepted);
    CHECK(outcome.spec.bootstrap_attempts == 1);
    CHECK(outcome.spec.initial_p == doctest::Approx(0.0));
}

TEST_CASE("bootstrap excludes after the attempt limit when the agent always picks it") {
    testing::TempDir dir("pipeline_boot_exclude");
    make_dataset(dir.str(), 8, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 2);
    ExperimentStack stack = build_stack(config);

    auto specs = load_instances(config.dataset.manifest, 1, 4, config.run.seed);
    auto& spec = specs.front();
    spec.negative_prompt = generate_negative_prompt(spec.caption);

    std::vector<ImageTensor> competitors;
    for (const auto& p : spec.competitor_paths) competitors.push_back(read_png(p));
    stack.make_agent = [&, competitors](const std::string&, double) {
        return std::unique_ptr<AgentAdapter>(
            new testing::UnknownSlotAgent(competitors, config.dataset.n, config.eval.common_height,
                                          config.eval.separator_px));
    };
    const BootstrapOutcome outcome = bootstrap_bad_image(spec, stack, config);
    CHECK(outcome.spec.bootstrap == InstanceSpec::Bootstrap::excluded);
    CHECK(outcome.spec.bootstrap_attempts == config.bootstrap.max_attempts);
}

TEST_CASE("bootstrap initial probability matches an independent estimate") {
    testing::TempDir dir("pipeline_boot_rederive");
    make_dataset(dir.str(), 10, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 2);
    const ExperimentStack stack = build_stack(config);

    auto specs = load_instances(config.dataset.manifest, 2, 4, config.run.seed);
    for (auto& spec : specs) {
        spec.negative_prompt = generate_negative_prompt(spec.caption);
        const BootstrapOutcome outcome = bootstrap_bad_image(spec, stack, config);
        if (outcome.spec.bootstrap != InstanceSpec::Bootstrap::accepted) continue;
        // re-run the verification trials with the recorded seed recipe
        std::vector<ImageTensor> competitors;
        for (const auto& p : spec.competitor_paths) competitors.push_back(read_png(p));
        const auto agent = stack.make_agent(spec.caption, config.agent.temperature);
        const int attempt = outcome.spec.bootstrap_attempts - 1;
        const SelectionEstimate est = run_trials(
            outcome.bad_image, competitors, *agent, config.eval.trials, config.dataset.n,
            mix_seed(config.run.seed, "bootstrap-eval-" + spec.id + "-" + std::to_string(attempt)),
            make_trial_options(config, spec.caption));
        CHECK(est.p_adv == doctest::Approx(outcome.spec.initial_p));
    }
}

TEST_CASE("experiment config json round trip and env overrides") {
    ExperimentConfig c;
    c.run.run_id = "abc";
    c.trap.learning_rate = 0.042;
    c.methods = {"initial", "trap"};
    const std::string text = c.to_json_text();
    const ExperimentConfig back = ExperimentConfig::from_json_text(text);
    CHECK(back.run.run_id == "abc");
    CHECK(back.trap.learning_rate == doctest::Approx(0.042));
    CHECK(back.methods == std::vector<std::string>{"initial", "trap"});

    setenv("TRAP_AGENT_ENDPOINT", "agent.example:9000", 1);
    setenv("TRAP_TEXTGEN_TOKEN", "sekrit", 1);
    ExperimentConfig overridden = back;
    overridden.apply_env_overrides();
    CHECK(overridden.agent.endpoint == "agent.example:9000");
    CHECK(overridden.textgen_token == "sekrit");
    unsetenv("TRAP_AGENT_ENDPOINT");
    unsetenv("TRAP_TEXTGEN_TOKEN");

    ExperimentConfig bad = back;
    bad.methods = {"mystery"};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = back;
    bad.dataset.n = 3;  // disagrees with trap.candidate_count
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("full toy experiment: self-consistent, resumable, deterministic") {
    testing::TempDir dir("pipeline_experiment");
    make_dataset(dir.str(), 14, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 3);
    config.methods = {"initial", "noopt", "trap"};

    const ExperimentReport report = run_experiment(config);
    const std::string run_dir = run_directory(config);
    REQUIRE(fs::exists(run_dir + "/report.json"));
    REQUIRE(fs::exists(run_dir + "/estimates.jsonl"));
    REQUIRE(fs::exists(run_dir + "/report.csv"));
    REQUIRE(fs::exists(run_dir + "/ablations.csv"));
    REQUIRE(fs::exists(run_dir + "/plots/threshold_sweep.png"));

    // self-consistency: rebuilding the report from persisted estimates
    // reproduces report.json byte for byte
    const std::string report_bytes = read_text_file(run_dir + "/report.json");
    stage_report(config);
    CHECK(read_text_file(run_dir + "/report.json") == report_bytes);

    // threshold sweep is monotone per method
    for (const auto& method : config.methods) {
        double previous = 1.0;
        for (const auto& point : report.threshold_sweep) {
            if (point.method != method) continue;
            CHECK(point.asr <= previous + 1e-12);
            previous = point.asr;
        }
    }

    // resume: a second run over the same directory reuses artifacts and
    // reproduces the identical report
    run_experiment(config);
    CHECK(read_text_file(run_dir + "/report.json") == report_bytes);

    // determinism: a fresh directory with the same config and seeds gives
    // the same report apart from the run location
    ExperimentConfig second = config;
    second.run.output_dir = dir.str() + "/runs2";
    run_experiment(second);
    CHECK(read_text_file(run_directory(second) + "/report.json") == report_bytes);
}

TEST_CASE("initial-only experiment with an agent that never picks the bad image has zero ASR") {
    testing::TempDir dir("pipeline_initial_zero");
    make_dataset(dir.str(), 10, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 2);
    config.methods = {"initial"};
    config.ablations.methods = {};
    config.run.run_id = "initial-only";

    // Bootstrap normally, then evaluate with a never-pick agent.
    stage_bootstrap(config);
    ExperimentStack stack = build_stack(config);
    const auto instances = read_instances_json(run_directory(config) + "/instances.json");
    std::vector<EstimateRow> rows;
    for (const auto& spec : instances) {
        if (spec.bootstrap != InstanceSpec::Bootstrap::accepted) continue;
        std::vector<ImageTensor> competitors;
        for (const auto& p : spec.competitor_paths) competitors.push_back(read_png(p));
        testing::KnownSlotAgent agent(competitors, config.dataset.n, config.eval.common_height,
                                      config.eval.separator_px);
        EstimateRow row;
        row.instance = spec.id;
        row.method = "initial";
        row.context = "main";
        row.estimate = run_trials(read_png(spec.bad_image_path), competitors, agent, config.eval.trials,
                                  config.dataset.n, 3, make_trial_options(config, spec.caption));
        rows.push_back(row);
    }
    REQUIRE_FALSE(rows.empty());
    const ExperimentReport report = report_from_estimates(config, rows);
    const MethodSummary* initial = report.find("initial");
    REQUIRE(initial != nullptr);
    CHECK(initial->asr == doctest::Approx(0.0));
}

TEST_CASE("build_stack backend kinds and validation") {
    ExperimentConfig c;
    c.dataset.n = 4;
    c.trap.candidate_count = 4;

    SUBCASE("toy defaults derive the branch width from the embedder") {
        const ExperimentStack stack = build_stack(c);
        CHECK(stack.embedder->dim() == 64);
        CHECK(stack.decoder->embed_dim() == 128);  // 2x embedder width
        const auto dec = stack.make_decomposer(stack.embedder->embed_text("a lantern"));
        CHECK(dec.branch_dim() == 128);
        CHECK(dec.mode() == DecomposerMode::analytic);
    }
    SUBCASE("remote kinds construct unconfigured and fail only on use") {
        c.backends.embedder_kind = "remote";
        c.backends.decoder_kind = "remote";
        c.backends.metric_kind = "remote";
        c.agent.kind = "remote";
        const ExperimentStack stack = build_stack(c);
        CHECK(stack.embedder->dim() == 512);
        CHECK(stack.decoder->embed_dim() == 1024);  // reference branch width
        CHECK_FALSE(stack.decoder->differentiable());
        CHECK_THROWS_AS(stack.embedder->embed_text("x"), BackendUnavailableError);
        CHECK_THROWS_AS(stack.metric->distance(ImageTensor(4, 4, 0.5), ImageTensor(4, 4, 0.5)),
                        BackendUnavailableError);
        auto agent = stack.make_agent("a lantern", 0.3);
        CHECK(agent->temperature() == doctest::Approx(0.3));
        CHECK_THROWS_AS(agent->choose(ImageTensor(8, 8, 0.5), "pick"), BackendUnavailableError);
    }
    SUBCASE("unknown kinds are rejected") {
        c.backends.embedder_kind = "quantum";
        CHECK_THROWS_AS(build_stack(c), Error);
        c.backends.embedder_kind = "toy";
        c.backends.segmenter_kind = "magic";
        CHECK_THROWS_AS(build_stack(c), Error);
        c.backends.segmenter_kind = "box";
        c.backends.decoder_kind = "remote";
        c.backends.embedder_kind = "remote";
        c.backends.decomposer_mode = "learned";  // needs a weights file
        CHECK_THROWS_AS(build_stack(c), Error);
    }
    SUBCASE("toy decoder requires the toy embedder") {
        c.backends.embedder_kind = "remote";
        c.backends.decoder_kind = "toy";
        CHECK_THROWS_AS(build_stack(c), Error);
    }
}

TEST_CASE("save_candidates persists intermediate decodes") {
    testing::TempDir dir("pipeline_candidates");
    make_dataset(dir.str(), 10, 32);
    ExperimentConfig config = toy_experiment_config(dir.str(), 1);
    config.methods = {"trap"};
    config.ablations.methods = {};
    config.run.save_candidates = true;
    config.trap.outer_iterations = 1;
    config.trap.inner_steps = 3;
    run_experiment(config);
    const auto instances = read_instances_json(run_directory(config) + "/instances.json");
    int with_candidates = 0;
    for (const auto& spec : instances) {
        if (spec.bootstrap != InstanceSpec::Bootstrap::accepted) continue;
        const std::string base = run_directory(config) + "/instances/" + spec.id + "/trap/";
        if (fs::exists(base + "iteration_1_step_1.png") && fs::exists(base + "iteration_1_step_3.png"))
            ++with_candidates;
    }
    CHECK(with_candidates >= 1);
}
