#include "policyeval/pipeline.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace policyeval {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

DecodeConfig decode_from_json(const json& obj, long default_seed) {
    const DecodeMode mode = decode_mode_from_string(obj.at("mode").get<std::string>());
    DecodeConfig decode;
    switch (mode) {
    case DecodeMode::greedy: decode = DecodeConfig::greedy(); break;
    case DecodeMode::sample: decode = DecodeConfig::sample(); break;
    case DecodeMode::self_consistency: decode = DecodeConfig::self_consistency(); break;
    }
    if (obj.contains("temperature")) decode.temperature = obj.at("temperature").get<double>();
    if (obj.contains("top_p")) decode.top_p = obj.at("top_p").get<double>();
    if (obj.contains("num_runs")) decode.num_runs = obj.at("num_runs").get<int>();
    // Per-run request seeds are base seed + run_index; the base defaults
    // to the experiment seed.
    decode.seed = obj.value("seed", default_seed);
    decode.validate();
    return decode;
}

ModelSpec model_from_json(const json& obj) {
    ModelSpec m;
    m.name = obj.at("name").get<std::string>();
    m.endpoint_url = obj.at("endpoint_url").get<std::string>();
    m.is_reasoning = obj.value("is_reasoning", false);
    m.is_quantized = obj.value("is_quantized", false);
    m.max_output_tokens = obj.value("max_output_tokens", 2048);
    if (m.max_output_tokens <= 0) throw ConfigError("max_output_tokens must be > 0");
    m.api_key_env = obj.value("api_key_env", "");
    m.think_open = obj.value("think_open", "<think>");
    m.think_close = obj.value("think_close", "</think>");
    return m;
}

json decode_to_json(const DecodeConfig& d) {
    json obj;
    obj["mode"] = decode_mode_name(d.mode);
    obj["temperature"] = d.temperature;
    obj["top_p"] = d.top_p;
    obj["num_runs"] = d.num_runs;
    obj["seed"] = d.seed;
    return obj;
}

json model_to_json(const ModelSpec& m) {
    json obj;
    obj["name"] = m.name;
    obj["endpoint_url"] = m.endpoint_url;
    obj["is_reasoning"] = m.is_reasoning;
    obj["is_quantized"] = m.is_quantized;
    obj["max_output_tokens"] = m.max_output_tokens;
    obj["api_key_env"] = m.api_key_env;
    obj["think_open"] = m.think_open;
    obj["think_close"] = m.think_close;
    return obj;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
    return from_json_text(util::read_file(path));
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config json: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.corpus_path = obj.at("corpus").get<std::string>();
    const std::string fmt = obj.value("corpus_format", "line-json");
    if (fmt == "delimited") cfg.corpus_format = CorpusFormat::delimited;
    else if (fmt == "line-json") cfg.corpus_format = CorpusFormat::line_json;
    else throw ConfigError("corpus_format must be \"delimited\" or \"line-json\"");
    cfg.policy_dir = obj.value("policy_dir", std::string(POLICYEVAL_ASSET_DIR "/policy"));
    cfg.refusal_patterns_path = obj.value("refusal_patterns", std::string());
    cfg.out_dir = obj.value("out_dir", std::string("out"));
    cfg.seed = obj.value("seed", 0L);
    cfg.parallel = obj.value("parallel", 4);
    for (const auto& m : obj.at("models")) cfg.models.push_back(model_from_json(m));
    for (const auto& v : obj.at("variants"))
        cfg.variants.push_back(PromptVariantId::from_string(v.get<std::string>()));
    for (const auto& d : obj.at("decodes"))
        cfg.decodes.push_back(decode_from_json(d, cfg.seed));

    if (obj.contains("analysis")) {
        const auto& a = obj.at("analysis");
        for (const auto& v : a.value("embed_variants", json::array()))
            cfg.analysis.embed_variants.push_back(
                PromptVariantId::from_string(v.get<std::string>()));
        cfg.analysis.embedding_provider = a.value("embedding_provider", "hash");
        cfg.analysis.embedding_dim = a.value("embedding_dim", std::size_t(64));
        cfg.analysis.embedding_url = a.value("embedding_url", "");
        cfg.analysis.embedding_model = a.value("embedding_model", "");
        cfg.analysis.target_dim = a.value("target_dim", std::size_t(15));
        cfg.analysis.trust_k = a.value("trust_k", std::size_t(5));
        cfg.analysis.cohesion_k = a.value("cohesion_k", std::size_t(1500));
        cfg.analysis.cohesion_mode = a.value("cohesion_mode", "per_row");
        cfg.analysis.alpha = a.value("alpha", 0.05);
        cfg.analysis.transition_base = a.value("transition_base", "zs-alpha");
        cfg.analysis.reduced_import = a.value("reduced_import", "");
    }
    cfg.validate();
    return cfg;
}

std::string ExperimentConfig::canonical_json() const {
    json obj;
    obj["corpus"] = corpus_path.string();
    obj["corpus_format"] = corpus_format == CorpusFormat::delimited ? "delimited" : "line-json";
    obj["policy_dir"] = policy_dir.string();
    obj["refusal_patterns"] = refusal_patterns_path.string();
    obj["seed"] = seed;
    obj["parallel"] = parallel;
    json models = json::array();
    for (const auto& m : this->models) models.push_back(model_to_json(m));
    obj["models"] = std::move(models);
    json variants = json::array();
    for (const auto& v : this->variants) variants.push_back(v.to_string());
    obj["variants"] = std::move(variants);
    json decodes = json::array();
    for (const auto& d : this->decodes) decodes.push_back(decode_to_json(d));
    obj["decodes"] = std::move(decodes);
    json a;
    json evs = json::array();
    for (const auto& v : analysis.embed_variants) evs.push_back(v.to_string());
    a["embed_variants"] = std::move(evs);
    a["embedding_provider"] = analysis.embedding_provider;
    a["embedding_dim"] = analysis.embedding_dim;
    a["embedding_url"] = analysis.embedding_url;
    a["embedding_model"] = analysis.embedding_model;
    a["target_dim"] = analysis.target_dim;
    a["trust_k"] = analysis.trust_k;
    a["cohesion_k"] = analysis.cohesion_k;
    a["cohesion_mode"] = analysis.cohesion_mode;
    a["alpha"] = analysis.alpha;
    a["transition_base"] = analysis.transition_base;
    a["reduced_import"] = analysis.reduced_import;
    obj["analysis"] = std::move(a);
    return obj.dump(2);
}

std::string ExperimentConfig::config_hash() const {
    return util::sha256_hex(canonical_json()).substr(0, 12);
}

const ModelSpec& ExperimentConfig::model_by_name(const std::string& name) const {
    for (const auto& m : models) {
        if (m.name == name) return m;
    }
    throw ConfigError("model not in roster: \"" + name + "\"");
}

std::vector<PromptVariantId> ExperimentConfig::effective_embed_variants() const {
    if (!analysis.embed_variants.empty()) return analysis.embed_variants;
    std::vector<PromptVariantId> out;
    for (const auto& v : variants) {
        if (v.kind != PromptKind::ablation) out.push_back(v);
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (models.empty()) throw ConfigError("config needs at least one model");
    if (variants.empty()) throw ConfigError("config needs at least one prompt variant");
    if (decodes.empty()) throw ConfigError("config needs at least one decode config");
    std::set<std::string> names;
    for (const auto& m : models) {
        if (!names.insert(m.name).second)
            throw ConfigError("duplicate model name in roster: \"" + m.name + "\"");
    }
    std::set<std::string> vs;
    for (const auto& v : variants) {
        if (!vs.insert(v.to_string()).second)
            throw ConfigError("duplicate prompt variant: " + v.to_string());
    }
    std::set<std::string> ds;
    for (const auto& d : decodes) {
        d.validate();
        if (!ds.insert(decode_mode_name(d.mode)).second)
            throw ConfigError("duplicate decode mode in config");
    }
    if (analysis.cohesion_mode != "per_row" && analysis.cohesion_mode != "pairwise")
        throw ConfigError("cohesion_mode must be per_row or pairwise");
    if (analysis.alpha <= 0 || analysis.alpha >= 1)
        throw ConfigError("alpha must be in (0, 1)");
}

// ---------------------------------------------------------------------------
// Stage plumbing

Stage stage_from_string(const std::string& s) {
    const std::string v = util::to_lower(util::trim(s));
    if (v == "ingest") return Stage::ingest;
    if (v == "run") return Stage::run;
    if (v == "parse") return Stage::parse;
    if (v == "evaluate") return Stage::evaluate;
    if (v == "ablate") return Stage::ablate;
    if (v == "embed") return Stage::embed;
    if (v == "diverge") return Stage::diverge;
    if (v == "significance") return Stage::significance;
    if (v == "report") return Stage::report;
    throw ConfigError("unknown stage: \"" + s + "\"");
}

const char* stage_name(Stage stage) {
    switch (stage) {
    case Stage::ingest: return "ingest";
    case Stage::run: return "run";
    case Stage::parse: return "parse";
    case Stage::evaluate: return "evaluate";
    case Stage::ablate: return "ablate";
    case Stage::embed: return "embed";
    case Stage::diverge: return "diverge";
    case Stage::significance: return "significance";
    case Stage::report: return "report";
    }
    return "?";
}

namespace {

struct ParsedLine {
    std::string post_id;
    int run_index = 0;
    ResponseCategory category = ResponseCategory::indeterminate;
    std::optional<Label> label;
    std::optional<std::string> raw_label_text;
    std::optional<std::string> summary;
    std::string body;
    bool unclosed_thinking = false;
    bool missing_directive = false;
};

json parsed_line_to_json(const ParsedLine& p) {
    json obj;
    obj["post_id"] = p.post_id;
    obj["run_index"] = p.run_index;
    obj["category"] = response_category_name(p.category);
    obj["label"] = p.label ? json(label_name(*p.label)) : json(nullptr);
    obj["raw_label_text"] = p.raw_label_text ? json(*p.raw_label_text) : json(nullptr);
    obj["summary"] = p.summary ? json(*p.summary) : json(nullptr);
    obj["body_without_thinking"] = p.body;
    obj["unclosed_thinking"] = p.unclosed_thinking;
    obj["missing_directive"] = p.missing_directive;
    return obj;
}

ParsedLine parsed_line_from_json(const json& obj) {
    ParsedLine p;
    p.post_id = obj.at("post_id").get<std::string>();
    p.run_index = obj.at("run_index").get<int>();
    p.category = response_category_from_string(obj.at("category").get<std::string>());
    if (!obj.at("label").is_null())
        p.label = obj.at("label").get<std::string>() == "yes" ? Label::yes : Label::no;
    if (!obj.at("raw_label_text").is_null())
        p.raw_label_text = obj.at("raw_label_text").get<std::string>();
    if (!obj.at("summary").is_null()) p.summary = obj.at("summary").get<std::string>();
    p.body = obj.at("body_without_thinking").get<std::string>();
    p.unclosed_thinking = obj.value("unclosed_thinking", false);
    p.missing_directive = obj.value("missing_directive", false);
    return p;
}

// post_id -> runs ordered by run_index
using ParsedCell = std::map<std::string, std::vector<ParsedLine>>;

ParsedCell read_parsed_cell(const std::filesystem::path& path) {
    ParsedCell cell;
    util::for_each_line(path, [&](std::size_t, std::string_view line) {
        ParsedLine p = parsed_line_from_json(json::parse(line));
        cell[p.post_id].push_back(std::move(p));
    });
    for (auto& [_, runs] : cell) {
        std::sort(runs.begin(), runs.end(),
                  [](const ParsedLine& a, const ParsedLine& b) {
                      return a.run_index < b.run_index;
                  });
    }
    return cell;
}

std::vector<ParsedResponse> to_parsed_responses(const std::vector<ParsedLine>& runs) {
    std::vector<ParsedResponse> out;
    out.reserve(runs.size());
    for (const auto& r : runs) {
        ParsedResponse p;
        p.category = r.category;
        p.label = r.label;
        out.push_back(std::move(p));
    }
    return out;
}

// Simple fixed-width text table for the human-readable report.
class TextTable {
public:
    explicit TextTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

    std::string render() const {
        std::vector<std::size_t> widths(header_.size(), 0);
        auto grow = [&](const std::vector<std::string>& row) {
            for (std::size_t i = 0; i < row.size() && i < widths.size(); ++i)
                widths[i] = std::max(widths[i], row[i].size());
        };
        grow(header_);
        for (const auto& r : rows_) grow(r);
        std::ostringstream out;
        auto emit = [&](const std::vector<std::string>& row) {
            for (std::size_t i = 0; i < widths.size(); ++i) {
                const std::string& cell = i < row.size() ? row[i] : std::string();
                out << cell;
                if (i + 1 < widths.size())
                    out << std::string(widths[i] - cell.size() + 2, ' ');
            }
            out << '\n';
        };
        emit(header_);
        std::vector<std::string> rule;
        for (std::size_t w : widths) rule.push_back(std::string(w, '-'));
        emit(rule);
        for (const auto& r : rows_) emit(r);
        return out.str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

std::string tsv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += '\t';
        out += cells[i];
    }
    out += '\n';
    return out;
}

std::string fmt(double v) { return util::format_double(v, 6); }

std::string variant_token(const PromptVariantId& v) {
    return util::sanitize_token(v.to_string());
}

// Score row produced by the evaluate stage and consumed by report.
struct ScoreRow {
    std::string decode;
    std::string model;
    std::string variant;
    std::size_t n = 0;
    ScoreTriple score;
    double invalid = 0.0;
    std::size_t total_runs = 0;
    std::size_t ties = 0;
    std::size_t zero_valid_posts = 0;
};

json score_row_to_json(const ScoreRow& r) {
    json obj;
    obj["decode"] = r.decode;
    obj["model"] = r.model;
    obj["variant"] = r.variant;
    obj["n"] = r.n;
    obj["precision"] = r.score.precision;
    obj["recall"] = r.score.recall;
    obj["f1"] = r.score.f1;
    obj["degenerate_precision"] = r.score.degenerate_precision;
    obj["degenerate_recall"] = r.score.degenerate_recall;
    obj["invalid_rate"] = r.invalid;
    obj["total_runs"] = r.total_runs;
    obj["ties"] = r.ties;
    obj["zero_valid_posts"] = r.zero_valid_posts;
    return obj;
}

ScoreRow score_row_from_json(const json& obj) {
    ScoreRow r;
    r.decode = obj.at("decode").get<std::string>();
    r.model = obj.at("model").get<std::string>();
    r.variant = obj.at("variant").get<std::string>();
    r.n = obj.at("n").get<std::size_t>();
    r.score.precision = obj.at("precision").get<double>();
    r.score.recall = obj.at("recall").get<double>();
    r.score.f1 = obj.at("f1").get<double>();
    r.score.degenerate_precision = obj.at("degenerate_precision").get<bool>();
    r.score.degenerate_recall = obj.at("degenerate_recall").get<bool>();
    r.invalid = obj.at("invalid_rate").get<double>();
    r.total_runs = obj.at("total_runs").get<std::size_t>();
    r.ties = obj.at("ties").get<std::size_t>();
    r.zero_valid_posts = obj.at("zero_valid_posts").get<std::size_t>();
    return r;
}

} // namespace

// ---------------------------------------------------------------------------
// Experiment

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
    dir_ = config_.out_dir / config_.config_hash();
    std::filesystem::create_directories(dir_);
    util::write_file(dir_ / "config.json", config_.canonical_json() + "\n");
}

std::string Experiment::cell_name(const std::string& model, const PromptVariantId& variant,
                                  DecodeMode decode) const {
    return util::sanitize_token(model) + "__" + variant_token(variant) + "__" +
           decode_mode_name(decode);
}

std::filesystem::path Experiment::run_store_path(const std::string& model,
                                                 const PromptVariantId& variant,
                                                 DecodeMode decode) const {
    return dir_ / "runs" / (cell_name(model, variant, decode) + ".jsonl");
}

void Experiment::require_artifact(const std::filesystem::path& path, Stage producer) const {
    if (!std::filesystem::exists(path)) {
        throw PipelineError("missing artifact " +
                            std::filesystem::relative(path, dir_).string() +
                            "; run stage '" + stage_name(producer) + "' first");
    }
}

std::vector<Post> Experiment::load_corpus_artifact() const {
    const auto path = dir_ / "corpus" / "corpus.jsonl";
    require_artifact(path, Stage::ingest);
    return load_corpus(path, CorpusFormat::line_json);
}

void Experiment::run_stage(Stage stage) {
    switch (stage) {
    case Stage::ingest: stage_ingest(); break;
    case Stage::run: stage_run(); break;
    case Stage::parse: stage_parse(); break;
    case Stage::evaluate: stage_evaluate(); break;
    case Stage::ablate: stage_ablate(); break;
    case Stage::embed: stage_embed(); break;
    case Stage::diverge: stage_diverge(); break;
    case Stage::significance: stage_significance(); break;
    case Stage::report: stage_report(); break;
    }
}

void Experiment::run_all() {
    for (Stage s : {Stage::ingest, Stage::run, Stage::parse, Stage::evaluate, Stage::ablate,
                    Stage::embed, Stage::diverge, Stage::significance, Stage::report}) {
        run_stage(s);
    }
}

void Experiment::stage_ingest() {
    auto corpus = load_corpus(config_.corpus_path, config_.corpus_format);
    write_corpus(dir_ / "corpus" / "corpus.jsonl", corpus, CorpusFormat::line_json);
    const CorpusStats stats = corpus_stats(corpus);
    json obj;
    obj["total"] = stats.total;
    obj["positives"] = stats.positives;
    obj["negatives"] = stats.negatives;
    obj["positive_rate"] = stats.positive_rate;
    util::write_file(dir_ / "corpus" / "stats.json", obj.dump(2) + "\n");
}

void Experiment::stage_run() {
    const auto corpus = load_corpus_artifact();
    const PolicyText policy = PolicyText::load(config_.policy_dir);
    std::size_t remaining = max_new_records_;

    for (const auto& model : config_.models) {
        std::string api_key;
        if (!model.api_key_env.empty()) {
            if (const char* v = std::getenv(model.api_key_env.c_str())) api_key = v;
        }
        HttpChatEndpoint endpoint(model.endpoint_url, HttpRetryPolicy{}, api_key);
        for (const auto& variant : config_.variants) {
            for (const auto& decode : config_.decodes) {
                RunStore store(run_store_path(model.name, variant, decode.mode));
                RunBatchOptions opts;
                opts.parallel = config_.parallel;
                if (max_new_records_ > 0) {
                    if (remaining == 0) return;
                    opts.max_new_records = remaining;
                }
                auto stats = run_batch(corpus, policy, model, variant, decode, endpoint,
                                       store, opts);
                if (max_new_records_ > 0) remaining -= std::min(remaining, stats.dispatched);
            }
        }
    }
}

void Experiment::stage_parse() {
    const RefusalPatterns refusals =
        config_.refusal_patterns_path.empty()
            ? RefusalPatterns::defaults()
            : RefusalPatterns::load(config_.refusal_patterns_path);

    for (const auto& model : config_.models) {
        for (const auto& variant : config_.variants) {
            for (const auto& decode : config_.decodes) {
                const auto store_path = run_store_path(model.name, variant, decode.mode);
                require_artifact(store_path, Stage::run);
                auto records = RunStore::read_all(store_path);
                std::vector<ParsedLine> lines;
                lines.reserve(records.size());
                for (const auto& record : records) {
                    ParsedResponse parsed = parse(record, model, refusals);
                    ParsedLine line;
                    line.post_id = record.post_id;
                    line.run_index = record.run_index;
                    line.category = parsed.category;
                    line.label = parsed.label;
                    line.raw_label_text = parsed.raw_label_text;
                    line.summary = parsed.summary;
                    line.body = parsed.body_without_thinking;
                    line.unclosed_thinking = parsed.unclosed_thinking;
                    line.missing_directive = parsed.missing_directive;
                    lines.push_back(std::move(line));
                }
                std::sort(lines.begin(), lines.end(),
                          [](const ParsedLine& a, const ParsedLine& b) {
                              if (a.post_id != b.post_id) return a.post_id < b.post_id;
                              return a.run_index < b.run_index;
                          });
                std::string out;
                for (const auto& line : lines) out += parsed_line_to_json(line).dump() + "\n";
                util::write_file(dir_ / "parsed" /
                                     (cell_name(model.name, variant, decode.mode) + ".jsonl"),
                                 out);
            }
        }
    }
}

void Experiment::stage_evaluate() {
    const auto corpus = load_corpus_artifact();
    std::map<std::string, Label> gold;
    for (const auto& p : corpus)
        gold[p.post_id] = p.gold_label == GoldLabel::antisemitic ? Label::yes : Label::no;

    std::vector<ScoreRow> rows;
    for (const auto& decode : config_.decodes) {
        // Load every cell for this decode once.
        std::map<std::pair<std::string, std::string>, ParsedCell> cells;
        for (const auto& model : config_.models) {
            for (const auto& variant : config_.variants) {
                const auto path = dir_ / "parsed" /
                                  (cell_name(model.name, variant, decode.mode) + ".jsonl");
                require_artifact(path, Stage::parse);
                cells[{model.name, variant.to_string()}] = read_parsed_cell(path);
            }
        }

        // A cell "yields valid" per post: greedy needs its single run
        // valid, sample needs every run valid (each run is scored), and
        // self-consistency needs a majority label.
        auto cell_valid = [&](const ParsedCell& cell, const std::string& post) {
            auto it = cell.find(post);
            if (it == cell.end() || it->second.empty()) return false;
            switch (decode.mode) {
            case DecodeMode::greedy:
                return it->second.front().category == ResponseCategory::valid;
            case DecodeMode::sample:
                if (static_cast<int>(it->second.size()) < decode.num_runs) return false;
                for (const auto& run : it->second) {
                    if (run.category != ResponseCategory::valid) return false;
                }
                return true;
            case DecodeMode::self_consistency: {
                return majority_vote(to_parsed_responses(it->second)).label.has_value();
            }
            }
            return false;
        };

        // Common subset: posts where every (model, variant) cell under
        // comparison yielded a valid response.
        std::vector<std::string> common;
        for (const auto& p : corpus) {
            bool ok = true;
            for (const auto& [_, cell] : cells) {
                if (!cell_valid(cell, p.post_id)) {
                    ok = false;
                    break;
                }
            }
            if (ok) common.push_back(p.post_id);
        }

        for (const auto& model : config_.models) {
            for (const auto& variant : config_.variants) {
                const ParsedCell& cell = cells.at({model.name, variant.to_string()});
                ScoreRow row;
                row.decode = decode_mode_name(decode.mode);
                row.model = model.name;
                row.variant = variant.to_string();
                row.n = common.size();

                std::vector<ParsedResponse> all_runs;
                for (const auto& [_, runs] : cell) {
                    for (const auto& r : runs) {
                        ParsedResponse p;
                        p.category = r.category;
                        p.label = r.label;
                        all_runs.push_back(p);
                    }
                }
                row.total_runs = all_runs.size();
                row.invalid = all_runs.empty() ? 0.0 : invalid_rate(all_runs);

                std::map<std::string, Label> gold_subset;
                for (const auto& id : common) gold_subset[id] = gold.at(id);

                if (!common.empty()) {
                    switch (decode.mode) {
                    case DecodeMode::greedy: {
                        std::map<std::string, Label> preds;
                        for (const auto& id : common)
                            preds[id] = *cell.at(id).front().label;
                        row.score = score_positive_class(preds, gold_subset);
                        break;
                    }
                    case DecodeMode::sample: {
                        std::vector<ScoreTriple> per_run;
                        for (int r = 0; r < decode.num_runs; ++r) {
                            std::map<std::string, Label> preds;
                            for (const auto& id : common)
                                preds[id] = *cell.at(id)[static_cast<std::size_t>(r)].label;
                            per_run.push_back(score_positive_class(preds, gold_subset));
                        }
                        row.score = average_over_runs(per_run);
                        break;
                    }
                    case DecodeMode::self_consistency: {
                        std::map<std::string, Label> preds;
                        for (const auto& id : common) {
                            auto vote = majority_vote(to_parsed_responses(cell.at(id)));
                            preds[id] = *vote.label;
                            if (vote.tie) ++row.ties;
                        }
                        row.score = score_positive_class(preds, gold_subset);
                        break;
                    }
                    }
                }
                for (const auto& p : corpus) {
                    auto it = cell.find(p.post_id);
                    bool any_valid = false;
                    if (it != cell.end()) {
                        for (const auto& r : it->second)
                            any_valid |= r.category == ResponseCategory::valid;
                    }
                    if (!any_valid) ++row.zero_valid_posts;
                }
                rows.push_back(std::move(row));
            }
        }
    }

    std::string jsonl;
    std::string tsv = tsv_row({"decode", "model", "variant", "n", "precision", "recall", "f1",
                               "invalid_rate", "total_runs", "ties", "zero_valid_posts"});
    for (const auto& r : rows) {
        jsonl += score_row_to_json(r).dump() + "\n";
        tsv += tsv_row({r.decode, r.model, r.variant, std::to_string(r.n),
                        fmt(r.score.precision), fmt(r.score.recall), fmt(r.score.f1),
                        fmt(r.invalid), std::to_string(r.total_runs), std::to_string(r.ties),
                        std::to_string(r.zero_valid_posts)});
    }
    util::write_file(dir_ / "metrics" / "scores.jsonl", jsonl);
    util::write_file(dir_ / "metrics" / "scores.tsv", tsv);
}

void Experiment::stage_ablate() {
    const DecodeConfig* greedy = nullptr;
    for (const auto& d : config_.decodes) {
        if (d.mode == DecodeMode::greedy) greedy = &d;
    }
    if (!greedy)
        throw PipelineError("ablate needs a greedy decode config (the ablation comparison "
                            "runs under deterministic decoding)");

    std::vector<PromptVariantId> needed = {{PromptKind::guided_cot, std::nullopt}};
    for (const auto& v : list_ablation_suite()) needed.push_back(v);
    for (const auto& v : needed) {
        if (std::find(config_.variants.begin(), config_.variants.end(), v) ==
            config_.variants.end())
            throw PipelineError("ablate needs variant " + v.to_string() +
                                " in the config; add it and rerun stage 'run'");
    }

    const auto corpus = load_corpus_artifact();
    std::map<std::string, Label> gold;
    for (const auto& p : corpus)
        gold[p.post_id] = p.gold_label == GoldLabel::antisemitic ? Label::yes : Label::no;

    std::map<std::pair<std::string, std::string>, ParsedCell> cells;
    for (const auto& model : config_.models) {
        for (const auto& v : needed) {
            const auto path =
                dir_ / "parsed" / (cell_name(model.name, v, DecodeMode::greedy) + ".jsonl");
            require_artifact(path, Stage::parse);
            cells[{model.name, v.to_string()}] = read_parsed_cell(path);
        }
    }

    // One shared subset: valid in the full prompt and every ablation, for
    // every model.
    std::vector<std::string> common;
    for (const auto& p : corpus) {
        bool ok = true;
        for (const auto& [_, cell] : cells) {
            auto it = cell.find(p.post_id);
            if (it == cell.end() || it->second.empty() ||
                it->second.front().category != ResponseCategory::valid) {
                ok = false;
                break;
            }
        }
        if (ok) common.push_back(p.post_id);
    }
    if (common.empty())
        throw PipelineError("ablate: no post is valid across all guided-cot and ablation "
                            "cells");

    std::map<std::string, Label> gold_subset;
    for (const auto& id : common) gold_subset[id] = gold.at(id);
    auto score_cell = [&](const ParsedCell& cell) {
        std::map<std::string, Label> preds;
        for (const auto& id : common) preds[id] = *cell.at(id).front().label;
        return score_positive_class(preds, gold_subset);
    };

    std::string jsonl;
    std::string tsv =
        tsv_row({"model", "excluded_thought", "f1_ablation", "f1_guided_cot", "delta", "n"});
    for (const auto& model : config_.models) {
        const ScoreTriple full =
            score_cell(cells.at({model.name, PromptVariantId{PromptKind::guided_cot, {}}
                                                 .to_string()}));
        for (int t = 1; t <= 5; ++t) {
            const PromptVariantId v{PromptKind::ablation, t};
            const ScoreTriple ablated = score_cell(cells.at({model.name, v.to_string()}));
            const double d = delta(full, ablated);
            json obj;
            obj["model"] = model.name;
            obj["excluded_thought"] = t;
            obj["f1_ablation"] = ablated.f1;
            obj["f1_guided_cot"] = full.f1;
            obj["delta"] = d;
            obj["n"] = common.size();
            jsonl += obj.dump() + "\n";
            tsv += tsv_row({model.name, "A" + std::to_string(t), fmt(ablated.f1),
                            fmt(full.f1), fmt(d), std::to_string(common.size())});
        }
    }
    util::write_file(dir_ / "metrics" / "ablation.jsonl", jsonl);
    util::write_file(dir_ / "metrics" / "ablation.tsv", tsv);
}

void Experiment::stage_embed() {
    const auto corpus = load_corpus_artifact();
    const auto embed_variants = config_.effective_embed_variants();
    if (embed_variants.empty()) throw PipelineError("no variants to embed");

    std::map<std::pair<std::string, std::string>, ParsedCell> cells;
    for (const auto& model : config_.models) {
        for (const auto& v : embed_variants) {
            const auto path =
                dir_ / "parsed" / (cell_name(model.name, v, DecodeMode::greedy) + ".jsonl");
            require_artifact(path, Stage::parse);
            cells[{model.name, v.to_string()}] = read_parsed_cell(path);
        }
    }

    // Shared valid subset across every model and embedded variant.
    std::vector<std::string> subset;
    for (const auto& p : corpus) {
        bool ok = true;
        for (const auto& [_, cell] : cells) {
            auto it = cell.find(p.post_id);
            if (it == cell.end() || it->second.empty() ||
                it->second.front().category != ResponseCategory::valid) {
                ok = false;
                break;
            }
        }
        if (ok) subset.push_back(p.post_id);
    }
    if (subset.empty())
        throw PipelineError("embed: no post has valid responses across all models and "
                            "embedded variants");

    std::unique_ptr<EmbeddingProvider> provider;
    if (config_.analysis.embedding_provider == "hash") {
        provider = std::make_unique<HashEmbeddingProvider>(config_.analysis.embedding_dim);
    } else if (config_.analysis.embedding_provider == "http") {
        provider = std::make_unique<HttpEmbeddingProvider>(config_.analysis.embedding_url,
                                                           config_.analysis.embedding_model);
    } else {
        throw ConfigError("embedding_provider must be hash or http");
    }
    EmbeddingCache cache(dir_ / "embeddings" / "cache");

    for (const auto& v : embed_variants) {
        std::vector<EmbedItem> items;
        for (const auto& model : config_.models) {
            const ParsedCell& cell = cells.at({model.name, v.to_string()});
            for (const auto& id : subset) {
                items.push_back(EmbedItem{EmbeddingKey{id, model.name, v.to_string()},
                                          cell.at(id).front().body});
            }
        }
        EmbeddingMatrix matrix = embed_responses(items, *provider, &cache);
        matrix.save(dir_ / "embeddings" / variant_token(v));
    }

    json meta;
    meta["provider"] = provider->id();
    meta["subset_size"] = subset.size();
    json posts = json::array();
    for (const auto& id : subset) posts.push_back(id);
    meta["posts"] = std::move(posts);
    util::write_file(dir_ / "embeddings" / "meta.json", meta.dump(2) + "\n");
}

namespace {

// Greedy predicted label per post for one model; used for intra-model
// grouping. Every subset post is valid by construction of the embed stage.
std::map<std::string, Label> greedy_predictions(const ParsedCell& cell) {
    std::map<std::string, Label> preds;
    for (const auto& [post, runs] : cell) {
        if (!runs.empty() && runs.front().category == ResponseCategory::valid)
            preds[post] = *runs.front().label;
    }
    return preds;
}

EmbeddingMatrix select_rows(const EmbeddingMatrix& m, const std::vector<std::size_t>& rows) {
    EmbeddingMatrix out(m.width());
    for (std::size_t r : rows) out.add_row(m.key(r), m.row(r));
    return out;
}

} // namespace

void Experiment::stage_diverge() {
    const auto embed_variants = config_.effective_embed_variants();
    std::vector<std::string> roster;
    for (const auto& m : config_.models) roster.push_back(m.name);

    for (const auto& v : embed_variants) {
        const auto base = dir_ / "embeddings" / variant_token(v);
        {
            std::filesystem::path probe = base;
            probe += ".embd";
            require_artifact(probe, Stage::embed);
        }
        EmbeddingMatrix raw = EmbeddingMatrix::load(base);

        EmbeddingMatrix reduced;
        json meta;
        meta["width_raw"] = raw.width();
        if (!config_.analysis.reduced_import.empty()) {
            const std::string pattern = config_.analysis.reduced_import;
            const std::string path =
                util::replace_all(pattern, "{variant}", variant_token(v));
            reduced = EmbeddingMatrix::load(path);
            if (reduced.rows() != raw.rows())
                throw PipelineError("imported reduction for " + v.to_string() +
                                    " has a different row count than the raw matrix");
            meta["imported"] = true;
            meta["target_dim"] = reduced.width();
        } else {
            std::size_t dim = config_.analysis.target_dim;
            const std::size_t max_dim =
                std::min(raw.present_count() - 1, raw.width());
            if (dim == 0) {
                std::vector<std::size_t> candidates;
                for (std::size_t c : {std::size_t(2), std::size_t(5), std::size_t(10),
                                      std::size_t(15), std::size_t(20), std::size_t(30)}) {
                    if (c <= max_dim) candidates.push_back(c);
                }
                dim = choose_dim_by_trustworthiness(raw, candidates,
                                                    config_.analysis.trust_k);
            }
            auto detail = reduce_pca_detail(raw, dim);
            reduced = std::move(detail.matrix);
            meta["imported"] = false;
            meta["target_dim"] = dim;
            meta["explained_variance_ratio"] = detail.explained_variance_ratio;
        }
        meta["trustworthiness"] =
            trustworthiness(raw, reduced, config_.analysis.trust_k);
        std::filesystem::path reduced_base = base;
        reduced_base += ".reduced";
        reduced.save(reduced_base);

        // Cross-model: SDV per model, SCMD ranking, 2D projection.
        std::vector<SemanticDistanceVector> sdvs;
        std::string sdv_jsonl;
        for (const auto& model : roster) {
            SemanticDistanceVector one = sdv(model, roster, reduced);
            json obj;
            obj["model"] = model;
            json entries = json::array();
            for (const auto& [other, d] : one.entries)
                entries.push_back({{"other", other}, {"median_distance", d}});
            obj["entries"] = std::move(entries);
            obj["scmd"] = scmd(one);
            sdv_jsonl += obj.dump() + "\n";
            sdvs.push_back(std::move(one));
        }
        util::write_file(dir_ / "divergence" / (variant_token(v) + ".sdv.jsonl"), sdv_jsonl);

        std::vector<std::pair<double, std::string>> ranking;
        for (const auto& s : sdvs) ranking.emplace_back(scmd(s), s.owner_model);
        std::stable_sort(ranking.begin(), ranking.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::string scmd_tsv = tsv_row({"model", "scmd"});
        for (const auto& [value, model] : ranking)
            scmd_tsv += tsv_row({model, fmt(value)});
        util::write_file(dir_ / "divergence" / (variant_token(v) + ".scmd.tsv"), scmd_tsv);

        // Model-by-model median distance matrix, delimited.
        {
            std::vector<std::string> header = {"model"};
            header.insert(header.end(), roster.begin(), roster.end());
            std::string matrix_tsv = tsv_row(header);
            for (const auto& s : sdvs) {
                std::vector<std::string> row = {s.owner_model};
                std::size_t entry = 0;
                for (const auto& other : roster) {
                    if (other == s.owner_model) row.push_back(fmt(0.0));
                    else row.push_back(fmt(s.entries[entry++].second));
                }
                matrix_tsv += tsv_row(row);
            }
            util::write_file(dir_ / "divergence" / (variant_token(v) + ".distance_matrix.tsv"),
                             matrix_tsv);
        }

        std::string pca_tsv = tsv_row({"model", "x", "y"});
        if (roster.size() >= 3) {
            for (const auto& [model, x, y] : pca_cluster_models(sdvs))
                pca_tsv += tsv_row({model, fmt(x), fmt(y)});
            meta["pca_cluster"] = true;
        } else {
            meta["pca_cluster"] = false; // needs at least 3 models
        }
        util::write_file(dir_ / "divergence" / (variant_token(v) + ".pca.tsv"), pca_tsv);

        // Intra-model: distance heatmap matrix and group summaries.
        for (const auto& model : config_.models) {
            const auto parsed_path =
                dir_ / "parsed" / (cell_name(model.name, v, DecodeMode::greedy) + ".jsonl");
            require_artifact(parsed_path, Stage::parse);
            const auto preds = greedy_predictions(read_parsed_cell(parsed_path));
            IntraModelMatrix intra = intra_model_matrix(model.name, reduced, preds);

            const std::string stem =
                variant_token(v) + ".intra." + util::sanitize_token(model.name);
            std::ofstream mat(dir_ / "divergence" / (stem + ".mat"),
                              std::ios::binary | std::ios::trunc);
            const std::uint64_t n = intra.distances.rows;
            mat.write(reinterpret_cast<const char*>(&n), sizeof(n));
            mat.write(reinterpret_cast<const char*>(intra.distances.data.data()),
                      static_cast<std::streamsize>(intra.distances.data.size() *
                                                   sizeof(double)));

            json summary;
            summary["model"] = model.name;
            summary["rows"] = n;
            std::size_t positives = 0;
            for (Label l : intra.labels) positives += l == Label::yes;
            summary["positives"] = positives;
            summary["negatives"] = n - positives;
            summary["within_positive"] = intra.summary.within_positive
                                             ? json(*intra.summary.within_positive)
                                             : json(nullptr);
            summary["within_negative"] = intra.summary.within_negative
                                             ? json(*intra.summary.within_negative)
                                             : json(nullptr);
            summary["cross"] =
                intra.summary.cross ? json(*intra.summary.cross) : json(nullptr);
            json ids = json::array();
            for (const auto& id : intra.post_ids) ids.push_back(id);
            summary["post_ids"] = std::move(ids);
            std::string labels;
            for (Label l : intra.labels) labels += l == Label::yes ? '+' : '-';
            summary["labels"] = labels;
            util::write_file(dir_ / "divergence" / (stem + ".json"),
                             summary.dump(2) + "\n");
        }
        util::write_file(dir_ / "divergence" / (variant_token(v) + ".meta.json"),
                         meta.dump(2) + "\n");
    }
}

void Experiment::stage_significance() {
    const auto embed_variants = config_.effective_embed_variants();
    const double alpha = config_.analysis.alpha;
    const std::size_t k = config_.analysis.cohesion_k;

    for (const auto& v : embed_variants) {
        std::filesystem::path reduced_base = dir_ / "embeddings" / variant_token(v);
        reduced_base += ".reduced";
        {
            std::filesystem::path probe = reduced_base;
            probe += ".embd";
            require_artifact(probe, Stage::diverge);
        }
        EmbeddingMatrix reduced = EmbeddingMatrix::load(reduced_base);

        std::string jsonl;
        std::string tsv = tsv_row({"model", "pos_size", "neg_size", "two_stat", "two_p",
                                   "two_stars", "greater_stat", "greater_p", "greater_stars",
                                   "less_stat", "less_p", "less_stars", "verdict"});
        for (const auto& model : config_.models) {
            const auto parsed_path =
                dir_ / "parsed" / (cell_name(model.name, v, DecodeMode::greedy) + ".jsonl");
            require_artifact(parsed_path, Stage::parse);
            const auto preds = greedy_predictions(read_parsed_cell(parsed_path));

            std::vector<std::size_t> pos_rows, neg_rows;
            for (std::size_t r : reduced.rows_for_model(model.name)) {
                auto it = preds.find(reduced.key(r).post_id);
                if (it == preds.end())
                    throw PipelineError("missing greedy prediction for post " +
                                        reduced.key(r).post_id);
                (it->second == Label::yes ? pos_rows : neg_rows).push_back(r);
            }
            EmbeddingMatrix pos = select_rows(reduced, pos_rows);
            EmbeddingMatrix neg = select_rows(reduced, neg_rows);

            const std::string token = variant_token(v) + "|" + model.name;
            const std::uint64_t seed_pos =
                util::fnv1a64(token + "|pos") ^ static_cast<std::uint64_t>(config_.seed);
            const std::uint64_t seed_neg =
                util::fnv1a64(token + "|neg") ^ static_cast<std::uint64_t>(config_.seed);

            std::vector<double> d_pos, d_neg;
            try {
                if (config_.analysis.cohesion_mode == "per_row") {
                    d_pos = cohesion_scores(pos, k, seed_pos);
                    d_neg = cohesion_scores(neg, k, seed_neg);
                } else {
                    d_pos = pairwise_group_distances(pos, k, seed_pos);
                    d_neg = pairwise_group_distances(neg, k, seed_neg);
                }
            } catch (const MathError& e) {
                throw PipelineError("significance for " + model.name + " / " +
                                    v.to_string() + ": " + e.what());
            }

            const KsResult two = ks_two_sample(d_pos, d_neg, KsAlternative::two_sided);
            const KsResult greater = ks_two_sample(d_pos, d_neg, KsAlternative::greater);
            const KsResult less = ks_two_sample(d_pos, d_neg, KsAlternative::less);
            const CohesionVerdict verdict = crossing_verdict(two, greater, less, alpha);

            json obj;
            obj["model"] = model.name;
            obj["variant"] = v.to_string();
            obj["pos_size"] = pos.rows();
            obj["neg_size"] = neg.rows();
            obj["cohesion_mode"] = config_.analysis.cohesion_mode;
            obj["k"] = k;
            obj["two_sided"] = {{"statistic", two.statistic},
                                {"p_value", two.p_value},
                                {"stars", significance_stars(two.p_value)}};
            obj["greater"] = {{"statistic", greater.statistic},
                              {"p_value", greater.p_value},
                              {"stars", significance_stars(greater.p_value)}};
            obj["less"] = {{"statistic", less.statistic},
                           {"p_value", less.p_value},
                           {"stars", significance_stars(less.p_value)}};
            obj["verdict"] = cohesion_verdict_name(verdict);
            jsonl += obj.dump() + "\n";
            tsv += tsv_row({model.name, std::to_string(pos.rows()),
                            std::to_string(neg.rows()), fmt(two.statistic), fmt(two.p_value),
                            significance_stars(two.p_value), fmt(greater.statistic),
                            fmt(greater.p_value), significance_stars(greater.p_value),
                            fmt(less.statistic), fmt(less.p_value),
                            significance_stars(less.p_value),
                            cohesion_verdict_name(verdict)});
        }
        util::write_file(dir_ / "significance" / (variant_token(v) + ".ks.jsonl"), jsonl);
        util::write_file(dir_ / "significance" / (variant_token(v) + ".ks.tsv"), tsv);
    }
}

void Experiment::stage_report() {
    const auto scores_path = dir_ / "metrics" / "scores.jsonl";
    require_artifact(scores_path, Stage::evaluate);
    std::vector<ScoreRow> rows;
    util::for_each_line(scores_path, [&](std::size_t, std::string_view line) {
        rows.push_back(score_row_from_json(json::parse(line)));
    });

    auto find_row = [&](const std::string& model, const std::string& variant,
                        const std::string& decode) -> const ScoreRow* {
        for (const auto& r : rows) {
            if (r.model == model && r.variant == variant && r.decode == decode) return &r;
        }
        return nullptr;
    };

    std::ostringstream report;
    report << "policyeval experiment report\n";
    report << "============================\n\n";
    report << "experiment: " << config_.config_hash() << "\n";
    report << "models: " << config_.models.size() << ", variants: " << config_.variants.size()
           << ", decodes: " << config_.decodes.size() << ", seed: " << config_.seed << "\n\n";

    std::vector<std::string> incomplete;

    // Invalid-rate table (per decode x model x variant).
    report << "## Invalid responses\n\n";
    TextTable invalid_table({"decode", "model", "variant", "invalid_rate", "runs"});
    for (const auto& r : rows) {
        invalid_table.add_row(
            {r.decode, r.model, r.variant, fmt(r.invalid), std::to_string(r.total_runs)});
    }
    report << invalid_table.render() << "\n";

    // Positive-class score grids.
    for (const auto& decode : config_.decodes) {
        const std::string dname = decode_mode_name(decode.mode);
        report << "## Positive-class scores (" << dname << ")\n\n";
        TextTable table({"model", "variant", "n", "precision", "recall", "f1", "ties"});
        for (const auto& model : config_.models) {
            for (const auto& variant : config_.variants) {
                const ScoreRow* r = find_row(model.name, variant.to_string(), dname);
                if (!r) {
                    incomplete.push_back("score cell " + model.name + "/" +
                                         variant.to_string() + "/" + dname);
                    continue;
                }
                table.add_row({r->model, r->variant, std::to_string(r->n),
                               fmt(r->score.precision), fmt(r->score.recall),
                               fmt(r->score.f1), std::to_string(r->ties)});
            }
        }
        report << table.render() << "\n";
    }

    // Guided-CoT ablation deltas.
    const auto ablation_path = dir_ / "metrics" / "ablation.jsonl";
    if (std::filesystem::exists(ablation_path)) {
        report << "## Guided-CoT ablation (delta f1 vs full prompt, greedy)\n\n";
        TextTable table({"model", "excluded", "f1_ablation", "f1_guided", "delta"});
        util::for_each_line(ablation_path, [&](std::size_t, std::string_view line) {
            json obj = json::parse(line);
            table.add_row({obj.at("model").get<std::string>(),
                           "A" + std::to_string(obj.at("excluded_thought").get<int>()),
                           fmt(obj.at("f1_ablation").get<double>()),
                           fmt(obj.at("f1_guided_cot").get<double>()),
                           fmt(obj.at("delta").get<double>())});
        });
        report << table.render() << "\n";
    } else {
        report << "## Guided-CoT ablation\n\n(not generated; stage 'ablate' has not run)\n\n";
    }

    // Decoding x prompting transition deltas.
    std::string base_variant = config_.analysis.transition_base;
    {
        bool base_present = false;
        for (const auto& r : rows) base_present |= r.variant == base_variant;
        if (!base_present) {
            for (const auto& v : config_.variants) {
                if (v.kind != PromptKind::ablation) {
                    base_variant = v.to_string();
                    break;
                }
            }
        }
    }
    std::vector<std::string> targets;
    for (const auto& v : config_.variants) {
        if (v.kind != PromptKind::ablation && v.to_string() != base_variant)
            targets.push_back(v.to_string());
    }

    report << "## Transition deltas (base " << base_variant
           << "; delta f1 = target - base)\n\n";
    TextTable transitions({"model", "target", "decode", "delta_f1"});
    std::string transitions_tsv = tsv_row({"model", "target", "decode", "delta_f1"});
    std::string transitions_jsonl;
    for (const auto& model : config_.models) {
        for (const auto& target : targets) {
            for (const auto& decode : config_.decodes) {
                const std::string dname = decode_mode_name(decode.mode);
                const ScoreRow* base_row = find_row(model.name, base_variant, dname);
                const ScoreRow* target_row = find_row(model.name, target, dname);
                if (!base_row || !target_row) {
                    incomplete.push_back("transition " + model.name + " " + base_variant +
                                         "->" + target + " (" + dname + ")");
                    continue;
                }
                const double d = delta(base_row->score, target_row->score);
                std::string signed_delta = (d >= 0 ? "+" : "") + fmt(d);
                transitions.add_row({model.name, target, dname, signed_delta});
                transitions_tsv += tsv_row({model.name, target, dname, signed_delta});
                json obj;
                obj["model"] = model.name;
                obj["base"] = base_variant;
                obj["target"] = target;
                obj["decode"] = dname;
                obj["delta_f1"] = d;
                transitions_jsonl += obj.dump() + "\n";
            }
        }
    }
    report << transitions.render() << "\n";
    util::write_file(dir_ / "report" / "transitions.tsv", transitions_tsv);
    util::write_file(dir_ / "report" / "transitions.jsonl", transitions_jsonl);

    // Divergence: SCMD rankings, 2D coordinates, trustworthiness.
    const auto embed_variants = config_.effective_embed_variants();
    bool any_divergence = false;
    for (const auto& v : embed_variants) {
        const auto scmd_path = dir_ / "divergence" / (variant_token(v) + ".scmd.tsv");
        if (!std::filesystem::exists(scmd_path)) continue;
        any_divergence = true;
        report << "## Cross-model divergence (" << v.to_string() << ")\n\n";
        const auto meta =
            json::parse(util::read_file(dir_ / "divergence" /
                                        (variant_token(v) + ".meta.json")));
        report << "reduced to " << meta.at("target_dim").get<std::size_t>()
               << " dims; trustworthiness "
               << fmt(meta.at("trustworthiness").get<double>()) << "\n\n";
        report << "SCMD ranking (lowest to highest):\n";
        TextTable table({"model", "scmd"});
        bool header = true;
        util::for_each_line(scmd_path, [&](std::size_t, std::string_view line) {
            if (header) {
                header = false;
                return;
            }
            auto tab = std::string(line).find('\t');
            table.add_row({std::string(line.substr(0, tab)),
                           std::string(line.substr(tab + 1))});
        });
        report << table.render() << "\n";

        const auto pca_path = dir_ / "divergence" / (variant_token(v) + ".pca.tsv");
        if (std::filesystem::exists(pca_path) && meta.value("pca_cluster", false)) {
            report << "SDV projection (2D):\n";
            TextTable coords({"model", "x", "y"});
            bool first = true;
            util::for_each_line(pca_path, [&](std::size_t, std::string_view line) {
                if (first) {
                    first = false;
                    return;
                }
                std::string s(line);
                const auto t1 = s.find('\t');
                const auto t2 = s.find('\t', t1 + 1);
                coords.add_row({s.substr(0, t1), s.substr(t1 + 1, t2 - t1 - 1),
                                s.substr(t2 + 1)});
            });
            report << coords.render() << "\n";
        } else if (config_.models.size() < 3) {
            report << "SDV projection: skipped (needs at least 3 models)\n\n";
        }
    }
    if (!any_divergence) {
        report << "## Cross-model divergence\n\n(not generated; stage 'diverge' has not "
                  "run)\n\n";
    }

    // KS significance tables.
    bool any_significance = false;
    for (const auto& v : embed_variants) {
        const auto ks_path = dir_ / "significance" / (variant_token(v) + ".ks.jsonl");
        if (!std::filesystem::exists(ks_path)) continue;
        any_significance = true;
        report << "## Cohesion significance (" << v.to_string() << ")\n\n";
        TextTable table({"model", "two-sided", "greater", "less", "verdict"});
        util::for_each_line(ks_path, [&](std::size_t, std::string_view line) {
            json obj = json::parse(line);
            auto cell = [&](const char* key) {
                const auto& t = obj.at(key);
                return fmt(t.at("statistic").get<double>()) +
                       t.at("stars").get<std::string>();
            };
            const bool two_significant =
                obj.at("two_sided").at("p_value").get<double>() < config_.analysis.alpha;
            table.add_row({obj.at("model").get<std::string>(), cell("two_sided"),
                           two_significant ? cell("greater") : "-",
                           two_significant ? cell("less") : "-",
                           obj.at("verdict").get<std::string>()});
        });
        report << table.render() << "\n";
    }
    if (!any_significance) {
        report << "## Cohesion significance\n\n(not generated; stage 'significance' has not "
                  "run)\n\n";
    }

    if (!incomplete.empty()) {
        report << "## Incomplete cells\n\n";
        for (const auto& line : incomplete) report << "- " << line << "\n";
        report << "\n";
    }

    util::write_file(dir_ / "report" / "report.txt", report.str());
}

} // namespace policyeval
