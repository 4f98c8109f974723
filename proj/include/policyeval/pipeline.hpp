#pragma once

#include "policyeval/corpus.hpp"
#include "policyeval/divergence.hpp"
#include "policyeval/inference.hpp"
#include "policyeval/metrics.hpp"
#include "policyeval/parsing.hpp"
#include "policyeval/prompts.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace policyeval {

struct AnalysisParams {
    std::vector<PromptVariantId> embed_variants; // empty = non-ablation config variants
    std::string embedding_provider = "hash";     // "hash" | "http"
    std::size_t embedding_dim = 64;              // hash provider width
    std::string embedding_url;                   // http provider base URL
    std::string embedding_model;
    std::size_t target_dim = 15; // 0 = pick by trustworthiness
    std::size_t trust_k = 5;
    std::size_t cohesion_k = 1500;
    std::string cohesion_mode = "per_row"; // or "pairwise"
    double alpha = 0.05;
    std::string transition_base = "zs-alpha";
    std::string reduced_import; // optional path pattern with {variant}, external reductions
};

struct ExperimentConfig {
    std::filesystem::path corpus_path;
    CorpusFormat corpus_format = CorpusFormat::line_json;
    std::filesystem::path policy_dir;
    std::filesystem::path refusal_patterns_path; // empty = built-in defaults
    std::filesystem::path out_dir = "out";
    long seed = 0;
    int parallel = 4;
    std::vector<ModelSpec> models;
    std::vector<PromptVariantId> variants;
    std::vector<DecodeConfig> decodes;
    AnalysisParams analysis;

    static ExperimentConfig from_json_file(const std::filesystem::path& path);
    static ExperimentConfig from_json_text(const std::string& text);

    // Canonical form used for the experiment hash; excludes out_dir so the
    // same experiment lands in the same keyed directory anywhere.
    std::string canonical_json() const;
    std::string config_hash() const; // first 12 hex chars of sha256

    const ModelSpec& model_by_name(const std::string& name) const;
    std::vector<PromptVariantId> effective_embed_variants() const;
    void validate() const;
};

enum class Stage { ingest, run, parse, evaluate, ablate, embed, diverge, significance, report };

Stage stage_from_string(const std::string& s);
const char* stage_name(Stage stage);

// Stage orchestrator. Every stage reads only persisted artifacts from the
// keyed experiment directory and writes its own, so partial reruns are
// re-entrant. A missing upstream artifact raises PipelineError naming the
// stage that produces it.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& dir() const { return dir_; }

    void run_stage(Stage stage);
    void run_all(); // ingest through report

    // Cell artifact naming, exposed for tests and the CLI.
    std::string cell_name(const std::string& model, const PromptVariantId& variant,
                          DecodeMode decode) const;
    std::filesystem::path run_store_path(const std::string& model,
                                         const PromptVariantId& variant,
                                         DecodeMode decode) const;

    // Interruption hook for resume tests: caps how many new records the
    // next `run` stage may append (0 = unlimited).
    void set_max_new_records(std::size_t cap) { max_new_records_ = cap; }

private:
    void stage_ingest();
    void stage_run();
    void stage_parse();
    void stage_evaluate();
    void stage_ablate();
    void stage_embed();
    void stage_diverge();
    void stage_significance();
    void stage_report();

    std::vector<Post> load_corpus_artifact() const;
    void require_artifact(const std::filesystem::path& path, Stage producer) const;

    ExperimentConfig config_;
    std::filesystem::path dir_;
    std::size_t max_new_records_ = 0;
};

} // namespace policyeval
