#include "policyeval/corpus.hpp"
#include "policyeval/divergence.hpp"
#include "policyeval/embedding.hpp"
#include "policyeval/errors.hpp"
#include "policyeval/linalg.hpp"
#include "policyeval/metrics.hpp"
#include "policyeval/parsing.hpp"
#include "policyeval/prompts.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace policyeval;

namespace {

std::map<std::string, Label> label_map(const std::map<std::string, std::string>& in) {
    std::map<std::string, Label> out;
    for (const auto& [k, v] : in) {
        if (v == "yes") out[k] = Label::yes;
        else if (v == "no") out[k] = Label::no;
        else throw ConfigError("label must be yes or no, got \"" + v + "\"");
    }
    return out;
}

linalg::Matrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    return linalg::Matrix::from_rows(rows);
}

std::vector<std::vector<double>> matrix_to_rows(const linalg::Matrix& m) {
    std::vector<std::vector<double>> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        out[i].assign(m.row(i).begin(), m.row(i).end());
    return out;
}

KsAlternative alternative_from_string(const std::string& s) {
    if (s == "two_sided" || s == "two-sided") return KsAlternative::two_sided;
    if (s == "greater") return KsAlternative::greater;
    if (s == "less") return KsAlternative::less;
    throw ConfigError("alternative must be two_sided, greater or less");
}

} // namespace

PYBIND11_MODULE(_policyeval, m) {
    m.doc() = "Policy-conditioned LLM classifier evaluation: prompt rendering, response "
              "parsing, classification metrics, and explanation-divergence statistics.";

    py::register_exception<Error>(m, "PolicyevalError");

    // -- prompts ------------------------------------------------------------
    py::class_<PolicyText>(m, "PolicyText")
        .def_readonly("definition_only", &PolicyText::definition_only)
        .def_readonly("full_policy", &PolicyText::full_policy)
        .def("example_bullets", &PolicyText::example_bullets);
    m.def("load_policy", &PolicyText::load, py::arg("dir"),
          "Load the policy text assets from a directory");

    py::class_<RenderedPrompt>(m, "RenderedPrompt")
        .def_property_readonly("system_message",
                               [](const RenderedPrompt& r) -> py::object {
                                   if (r.system_message) return py::cast(*r.system_message);
                                   return py::none();
                               })
        .def_readonly("user_message", &RenderedPrompt::user_message)
        .def_property_readonly("variant", [](const RenderedPrompt& r) {
            return r.variant.to_string();
        });

    m.def(
        "render",
        [](const std::string& variant, const std::string& post_text,
           const PolicyText& policy) {
            Post post{"post", post_text, GoldLabel::non_antisemitic};
            return render(PromptVariantId::from_string(variant), post, policy);
        },
        py::arg("variant"), py::arg("post_text"), py::arg("policy"),
        "Render a prompt variant (zs-as|zs-alpha|zs-beta|zs-cot|guided-cot|ablation:a1..a5)");

    m.def("list_ablation_suite", [] {
        std::vector<std::string> out;
        for (const auto& v : list_ablation_suite()) out.push_back(v.to_string());
        return out;
    });
    m.def("guided_thoughts", [] { return guided_thoughts(); });

    // -- parsing ------------------------------------------------------------
    m.def(
        "strip_thinking",
        [](const std::string& text, bool is_reasoning, const std::string& open,
           const std::string& close) {
            auto r = strip_thinking(text, is_reasoning, open, close);
            return py::make_tuple(r.text, r.unclosed);
        },
        py::arg("text"), py::arg("is_reasoning"), py::arg("open_marker") = "<think>",
        py::arg("close_marker") = "</think>",
        "Returns (stripped_text, unclosed_flag)");

    m.def(
        "parse_response",
        [](const std::string& text, const std::string& finish_reason, bool is_reasoning,
           const std::optional<std::vector<std::string>>& refusal_patterns) {
            RefusalPatterns refusals = refusal_patterns
                                           ? RefusalPatterns{*refusal_patterns}
                                           : RefusalPatterns::defaults();
            auto p = parse_response(text, finish_reason_from_string(finish_reason),
                                    is_reasoning, refusals);
            py::dict out;
            out["category"] = response_category_name(p.category);
            out["label"] = p.label ? py::cast(label_name(*p.label)) : py::none();
            out["raw_label_text"] =
                p.raw_label_text ? py::cast(*p.raw_label_text) : py::none();
            out["summary"] = p.summary ? py::cast(*p.summary) : py::none();
            out["body_without_thinking"] = p.body_without_thinking;
            out["unclosed_thinking"] = p.unclosed_thinking;
            out["missing_directive"] = p.missing_directive;
            return out;
        },
        py::arg("text"), py::arg("finish_reason") = "stop", py::arg("is_reasoning") = false,
        py::arg("refusal_patterns") = py::none());

    m.def("invalid_rate", [](const std::vector<std::string>& categories) {
        std::vector<ParsedResponse> parsed;
        for (const auto& c : categories) {
            ParsedResponse p;
            p.category = response_category_from_string(c);
            if (p.category == ResponseCategory::valid) p.label = Label::yes;
            parsed.push_back(p);
        }
        return invalid_rate(parsed);
    });

    // -- metrics ------------------------------------------------------------
    py::class_<ScoreTriple>(m, "ScoreTriple")
        .def_readonly("precision", &ScoreTriple::precision)
        .def_readonly("recall", &ScoreTriple::recall)
        .def_readonly("f1", &ScoreTriple::f1)
        .def_readonly("degenerate_precision", &ScoreTriple::degenerate_precision)
        .def_readonly("degenerate_recall", &ScoreTriple::degenerate_recall)
        .def("__repr__", [](const ScoreTriple& s) {
            return "ScoreTriple(precision=" + std::to_string(s.precision) +
                   ", recall=" + std::to_string(s.recall) + ", f1=" + std::to_string(s.f1) +
                   ")";
        });

    m.def(
        "score_positive_class",
        [](const std::map<std::string, std::string>& preds,
           const std::map<std::string, std::string>& gold) {
            return score_positive_class(label_map(preds), label_map(gold));
        },
        py::arg("preds"), py::arg("gold"),
        "Positive-class precision/recall/F1 from id->'yes'/'no' maps");

    m.def(
        "majority_vote",
        [](const std::vector<std::optional<std::string>>& labels) {
            std::vector<ParsedResponse> runs;
            for (const auto& l : labels) {
                ParsedResponse p;
                if (l && (*l == "yes" || *l == "no")) {
                    p.category = ResponseCategory::valid;
                    p.label = *l == "yes" ? Label::yes : Label::no;
                } else {
                    p.category = ResponseCategory::indeterminate;
                }
                runs.push_back(p);
            }
            auto v = majority_vote(runs);
            py::dict out;
            out["label"] = v.label ? py::cast(label_name(*v.label)) : py::none();
            out["tie"] = v.tie;
            out["yes_votes"] = v.yes_votes;
            out["no_votes"] = v.no_votes;
            out["invalid_runs"] = v.invalid_runs;
            return out;
        },
        py::arg("labels"),
        "Majority vote over per-run labels; entries other than 'yes'/'no' count as invalid");

    m.def("average_over_runs", [](const std::vector<ScoreTriple>& scores) {
        return average_over_runs(scores);
    });
    m.def("delta", [](const ScoreTriple& base, const ScoreTriple& other) {
        return delta(base, other);
    });

    // -- divergence ---------------------------------------------------------
    m.def("cos_dist", [](const std::vector<double>& u, const std::vector<double>& v) {
        return cos_dist(u, v);
    });

    py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
        .def(py::init<>())
        .def("add_row",
             [](EmbeddingMatrix& m2, const std::string& post_id, const std::string& model,
                const std::string& variant, const std::vector<double>& values) {
                 m2.add_row({post_id, model, variant}, values);
             },
             py::arg("post_id"), py::arg("model"), py::arg("variant"), py::arg("values"))
        .def("rows", &EmbeddingMatrix::rows)
        .def("width", &EmbeddingMatrix::width)
        .def("row",
             [](const EmbeddingMatrix& m2, std::size_t i) {
                 auto r = m2.row(i);
                 return std::vector<double>(r.begin(), r.end());
             })
        .def("models", &EmbeddingMatrix::models)
        .def("save", &EmbeddingMatrix::save, py::arg("base_path"),
             "Write <base>.embd and <base>.idx.jsonl")
        .def_static("load", &EmbeddingMatrix::load, py::arg("base_path"));

    m.def("cross_model_distribution",
          [](const std::string& a, const std::string& b, const EmbeddingMatrix& m2) {
              return cross_model_distribution(a, b, m2);
          });
    m.def("sdv",
          [](const std::string& a, const std::vector<std::string>& roster,
             const EmbeddingMatrix& m2) {
              auto v = sdv(a, roster, m2);
              std::vector<std::pair<std::string, double>> out = v.entries;
              return out;
          },
          "Median distance to every other roster model, in roster order");
    m.def("scmd",
          [](const std::string& a, const std::vector<std::string>& roster,
             const EmbeddingMatrix& m2) { return scmd(sdv(a, roster, m2)); });

    m.def(
        "reduce_pca",
        [](const std::vector<std::vector<double>>& rows, std::size_t target_dim) {
            auto result = linalg::pca(matrix_from_rows(rows), target_dim);
            return matrix_to_rows(result.projected);
        },
        py::arg("rows"), py::arg("target_dim"));

    m.def(
        "trustworthiness",
        [](const std::vector<std::vector<double>>& original,
           const std::vector<std::vector<double>>& reduced, std::size_t k) {
            return linalg::trustworthiness(matrix_from_rows(original),
                                           matrix_from_rows(reduced), k);
        },
        py::arg("original"), py::arg("reduced"), py::arg("k"));

    m.def(
        "cohesion_scores",
        [](const std::vector<std::vector<double>>& rows, std::size_t k, std::uint64_t seed) {
            EmbeddingMatrix m2;
            for (std::size_t i = 0; i < rows.size(); ++i)
                m2.add_row({"r" + std::to_string(i), "m", "v"}, rows[i]);
            return cohesion_scores(m2, k, seed);
        },
        py::arg("rows"), py::arg("k"), py::arg("seed"));

    py::class_<KsResult>(m, "KsResult")
        .def_readonly("statistic", &KsResult::statistic)
        .def_readonly("p_value", &KsResult::p_value)
        .def_readonly("m", &KsResult::m)
        .def_readonly("n", &KsResult::n)
        .def_property_readonly("alternative",
                               [](const KsResult& r) {
                                   return ks_alternative_name(r.alternative);
                               })
        .def_property_readonly("stars",
                               [](const KsResult& r) {
                                   return significance_stars(r.p_value);
                               })
        .def("__repr__", [](const KsResult& r) {
            return "KsResult(statistic=" + std::to_string(r.statistic) +
                   ", p_value=" + std::to_string(r.p_value) + ")";
        });

    m.def(
        "ks_two_sample",
        [](const std::vector<double>& d_pos, const std::vector<double>& d_neg,
           const std::string& alternative) {
            return ks_two_sample(d_pos, d_neg, alternative_from_string(alternative));
        },
        py::arg("d_pos"), py::arg("d_neg"), py::arg("alternative") = "two_sided");

    m.def(
        "crossing_verdict",
        [](const KsResult& two, const KsResult& greater, const KsResult& less,
           double alpha) {
            return std::string(
                cohesion_verdict_name(crossing_verdict(two, greater, less, alpha)));
        },
        py::arg("two_sided"), py::arg("greater"), py::arg("less"), py::arg("alpha") = 0.05);

    m.def("significance_stars", &significance_stars, py::arg("p_value"));
}
