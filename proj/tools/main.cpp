#include "policyeval/errors.hpp"
#include "policyeval/inference.hpp"
#include "policyeval/mock_server.hpp"
#include "policyeval/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

namespace {

using namespace policyeval;

ExperimentConfig load_config(const std::string& config_path, const std::string& out_override,
                             long seed_override, bool seed_given) {
    if (config_path.empty())
        throw ConfigError("--config FILE is required for this command");
    ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_given) cfg.seed = seed_override;
    return cfg;
}

int run_stage_command(const std::string& config_path, const std::string& out_override,
                      long seed_override, bool seed_given, Stage stage) {
    ExperimentConfig cfg = load_config(config_path, out_override, seed_override, seed_given);
    Experiment experiment(std::move(cfg));
    experiment.run_stage(stage);
    std::cout << stage_name(stage) << ": ok (" << experiment.dir().string() << ")\n";
    return 0;
}

volatile std::sig_atomic_t g_stop = 0;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"policy-conditioned LLM classifier evaluation and explanation divergence"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long seed = 0;
    bool seed_given = false;
    app.add_option("--config", config_path, "experiment config file (json)");
    app.add_option("--out", out_dir, "output directory override");
    app.add_option("--seed", seed, "seed override")->each([&](const std::string&) {
        seed_given = true;
    });

    struct StageCmd {
        Stage stage;
        const char* name;
        const char* help;
    };
    const StageCmd stages[] = {
        {Stage::ingest, "ingest", "load and validate the corpus, write the corpus artifact"},
        {Stage::parse, "parse", "classify raw responses into the response taxonomy"},
        {Stage::evaluate, "evaluate", "positive-class P/R/F1 per (model, variant, decode)"},
        {Stage::ablate, "ablate", "guided-cot ablation deltas"},
        {Stage::embed, "embed", "embed explanation bodies (cache-backed)"},
        {Stage::diverge, "diverge", "SDV/SCMD, 2D projection, intra-model matrices"},
        {Stage::significance, "significance", "cohesion distributions and KS tests"},
        {Stage::report, "report", "aggregate all tables into the report"},
    };
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        cmd->fallthrough();
        cmd->callback([&, stage = s.stage] {
            std::exit(run_stage_command(config_path, out_dir, seed, seed_given, stage));
        });
    }

    // `run` doubles as the full batch stage and a single-cell runner.
    auto* run_cmd = app.add_subcommand("run", "issue chat-completion batches");
    run_cmd->fallthrough();
    std::string run_model, run_prompt, run_decode, run_out_file;
    int run_runs = 0;
    int run_max_tokens = 0;
    int run_parallel = 0;
    run_cmd->add_option("--model", run_model, "single-cell: model name from the roster");
    run_cmd->add_option("--prompt", run_prompt,
                        "single-cell: zs-as|zs-alpha|zs-beta|zs-cot|guided-cot|ablation:a1..a5");
    run_cmd->add_option("--decode", run_decode, "single-cell: greedy|sample|sc");
    run_cmd->add_option("--runs", run_runs, "override num_runs");
    run_cmd->add_option("--max-tokens", run_max_tokens, "override max output tokens");
    run_cmd->add_option("--parallel", run_parallel, "parallel in-flight requests");
    run_cmd->add_option("--out", run_out_file, "single-cell: run store file");
    run_cmd->callback([&] {
        ExperimentConfig cfg = load_config(config_path, out_dir, seed, seed_given);
        if (run_parallel > 0) cfg.parallel = run_parallel;

        if (run_model.empty() && run_prompt.empty() && run_decode.empty()) {
            // Whole-stage form: --out names the output directory, as with
            // every other stage verb.
            if (!run_out_file.empty()) cfg.out_dir = run_out_file;
            Experiment experiment(std::move(cfg));
            experiment.run_stage(Stage::run);
            std::cout << "run: ok (" << experiment.dir().string() << ")\n";
            std::exit(0);
        }
        if (run_model.empty() || run_prompt.empty() || run_decode.empty())
            throw ConfigError("single-cell run needs --model, --prompt and --decode");

        ModelSpec model = cfg.model_by_name(run_model);
        if (run_max_tokens > 0) model.max_output_tokens = run_max_tokens;
        const PromptVariantId variant = PromptVariantId::from_string(run_prompt);
        DecodeConfig decode;
        switch (decode_mode_from_string(run_decode)) {
        case DecodeMode::greedy: decode = DecodeConfig::greedy(cfg.seed); break;
        case DecodeMode::sample: decode = DecodeConfig::sample(5, cfg.seed); break;
        case DecodeMode::self_consistency:
            decode = DecodeConfig::self_consistency(30, cfg.seed);
            break;
        }
        if (run_runs > 0 && decode.mode != DecodeMode::greedy) decode.num_runs = run_runs;

        Experiment experiment(cfg);
        experiment.run_stage(Stage::ingest);
        const auto corpus = load_corpus(cfg.corpus_path, cfg.corpus_format);
        const PolicyText policy = PolicyText::load(cfg.policy_dir);
        std::string api_key;
        if (!model.api_key_env.empty()) {
            if (const char* v = std::getenv(model.api_key_env.c_str())) api_key = v;
        }
        HttpChatEndpoint endpoint(model.endpoint_url, HttpRetryPolicy{}, api_key);
        const std::filesystem::path store_path =
            run_out_file.empty() ? experiment.run_store_path(model.name, variant, decode.mode)
                                 : std::filesystem::path(run_out_file);
        RunStore store(store_path);
        RunBatchOptions opts;
        opts.parallel = cfg.parallel;
        auto stats = run_batch(corpus, policy, model, variant, decode, endpoint, store, opts);
        std::cout << "run: dispatched " << stats.dispatched << ", skipped " << stats.skipped
                  << ", errors " << stats.errors << " -> " << store_path.string() << "\n";
        std::exit(0);
    });

    auto* serve_cmd =
        app.add_subcommand("mock-serve", "serve a scripted chat/embeddings endpoint");
    serve_cmd->fallthrough();
    std::string script_path;
    int serve_port = 0;
    std::size_t serve_dim = 32;
    serve_cmd->add_option("--script", script_path, "mock script json")->required();
    serve_cmd->add_option("--port", serve_port, "port (0 = ephemeral)");
    serve_cmd->add_option("--dim", serve_dim, "embedding dimension");
    serve_cmd->callback([&] {
        MockScript script = MockScript::from_json_file(script_path);
        MockServer server(std::move(script), serve_dim);
        server.start(serve_port);
        std::cout << "mock endpoint at " << server.base_url() << " (ctrl-c to stop)\n";
        std::signal(SIGINT, [](int) { g_stop = 1; });
        std::signal(SIGTERM, [](int) { g_stop = 1; });
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
        std::exit(0);
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
