#pragma once

#include "policyeval/inference.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace policyeval {

enum class Label { yes, no };

const char* label_name(Label label);

enum class ResponseCategory { valid, indeterminate, failure_exceed, failure_refusal };

const char* response_category_name(ResponseCategory c);
ResponseCategory response_category_from_string(const std::string& s);

struct ParsedResponse {
    ResponseCategory category = ResponseCategory::indeterminate;
    std::optional<Label> label;
    std::optional<std::string> raw_label_text; // directive value that was not yes/no
    std::optional<std::string> summary;
    std::string body_without_thinking;
    bool unclosed_thinking = false; // open marker without a close marker
    bool missing_directive = false; // indeterminate with no label line at all
};

struct StripResult {
    std::string text;
    bool unclosed = false;
};

// Removes the first well-formed open/close block when is_reasoning is set;
// an unmatched open marker strips to the end and flags the result.
StripResult strip_thinking(const std::string& response_text, bool is_reasoning,
                           const std::string& open_marker = "<think>",
                           const std::string& close_marker = "</think>");

// Case-insensitive substring patterns signalling an explicit refusal.
// Shipped as a config asset because refusal phrasing drifts across model
// releases.
struct RefusalPatterns {
    std::vector<std::string> patterns;

    static RefusalPatterns defaults();
    static RefusalPatterns load(const std::filesystem::path& path);
    bool matches(const std::string& body) const;
};

// Classifies one response. Precedence: finish_reason=length beats
// everything; otherwise the last "Antisemitic:" directive decides
// valid/indeterminate; otherwise refusal patterns; otherwise indeterminate
// with no raw label. Total function: anomalies become categories.
ParsedResponse parse_response(const std::string& response_text, FinishReason finish_reason,
                              bool is_reasoning, const RefusalPatterns& refusals,
                              const std::string& think_open = "<think>",
                              const std::string& think_close = "</think>");

ParsedResponse parse(const RunRecord& record, const ModelSpec& model,
                     const RefusalPatterns& refusals);

// (count of non-valid) / total; empty input is an error.
double invalid_rate(const std::vector<ParsedResponse>& parsed);

} // namespace policyeval
