#include "policyeval/parsing.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

namespace policyeval {

const char* label_name(Label label) { return label == Label::yes ? "yes" : "no"; }

const char* response_category_name(ResponseCategory c) {
    switch (c) {
    case ResponseCategory::valid: return "valid";
    case ResponseCategory::indeterminate: return "indeterminate";
    case ResponseCategory::failure_exceed: return "failure_exceed";
    case ResponseCategory::failure_refusal: return "failure_refusal";
    }
    return "?";
}

ResponseCategory response_category_from_string(const std::string& s) {
    if (s == "valid") return ResponseCategory::valid;
    if (s == "indeterminate") return ResponseCategory::indeterminate;
    if (s == "failure_exceed") return ResponseCategory::failure_exceed;
    if (s == "failure_refusal") return ResponseCategory::failure_refusal;
    throw ConfigError("unknown response category: \"" + s + "\"");
}

StripResult strip_thinking(const std::string& response_text, bool is_reasoning,
                           const std::string& open_marker, const std::string& close_marker) {
    if (!is_reasoning) return {response_text, false};
    const auto open = response_text.find(open_marker);
    if (open == std::string::npos) return {response_text, false};
    const auto close = response_text.find(close_marker, open + open_marker.size());
    if (close == std::string::npos) {
        return {response_text.substr(0, open), true};
    }
    std::string out = response_text.substr(0, open);
    out += response_text.substr(close + close_marker.size());
    return {out, false};
}

RefusalPatterns RefusalPatterns::defaults() {
    return RefusalPatterns{{"I cannot", "I can't", "I won't"}};
}

RefusalPatterns RefusalPatterns::load(const std::filesystem::path& path) {
    RefusalPatterns out;
    for (const auto& line : util::split_lines(util::read_file(path))) {
        std::string t = util::trim(line);
        if (t.empty() || t[0] == '#') continue;
        out.patterns.push_back(t);
    }
    if (out.patterns.empty())
        throw ConfigError("refusal pattern file is empty: " + path.string());
    return out;
}

bool RefusalPatterns::matches(const std::string& body) const {
    for (const auto& p : patterns) {
        if (util::icontains(body, p)) return true;
    }
    return false;
}

namespace {

// Drops markdown emphasis, then leading bullet/heading clutter, so
// "- **Antisemitic:** Yes" matches the directive the templates ask for.
std::string normalize_directive_line(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    for (char c : line) {
        if (c == '*' || c == '_' || c == '`' || c == '~') continue;
        out.push_back(c);
    }
    size_t begin = 0;
    while (begin < out.size()) {
        char c = out[begin];
        if (c == '-' || c == '+' || c == '>' || c == '#' ||
            std::isspace(static_cast<unsigned char>(c))) {
            ++begin;
        } else {
            break;
        }
    }
    return out.substr(begin);
}

bool is_punct_trim_char(char c) {
    switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '"': case '\'': case '(': case ')': case '[': case ']':
    case '{': case '}':
        return true;
    default:
        return false;
    }
}

std::string trim_punctuation(std::string_view s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && is_punct_trim_char(s[begin])) ++begin;
    while (end > begin && is_punct_trim_char(s[end - 1])) --end;
    return util::trim(s.substr(begin, end - begin));
}

// Returns the value after "<keyword>:" if the normalized line starts with
// the keyword, case-insensitively.
std::optional<std::string> directive_value(std::string_view line, std::string_view keyword) {
    const std::string normalized = normalize_directive_line(line);
    if (normalized.size() < keyword.size()) return std::nullopt;
    if (!util::iequals(std::string_view(normalized).substr(0, keyword.size()), keyword))
        return std::nullopt;
    size_t pos = keyword.size();
    while (pos < normalized.size() &&
           std::isspace(static_cast<unsigned char>(normalized[pos])))
        ++pos;
    if (pos >= normalized.size() || normalized[pos] != ':') return std::nullopt;
    return util::trim(std::string_view(normalized).substr(pos + 1));
}

} // namespace

ParsedResponse parse_response(const std::string& response_text, FinishReason finish_reason,
                              bool is_reasoning, const RefusalPatterns& refusals,
                              const std::string& think_open, const std::string& think_close) {
    ParsedResponse out;
    StripResult stripped = strip_thinking(response_text, is_reasoning, think_open, think_close);
    out.body_without_thinking = stripped.text;
    out.unclosed_thinking = stripped.unclosed;

    if (finish_reason == FinishReason::length) {
        out.category = ResponseCategory::failure_exceed;
        return out;
    }

    const auto lines = util::split_lines(out.body_without_thinking);

    // Templates put the label at the very end; earlier occurrences may be
    // quoted instructions, so scan upward from the last line.
    std::optional<std::string> label_value;
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        if (auto v = directive_value(*it, "antisemitic")) {
            label_value = v;
            break;
        }
    }
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        if (auto v = directive_value(*it, "summary")) {
            if (!v->empty()) out.summary = *v;
            break;
        }
    }

    if (label_value) {
        const std::string raw = trim_punctuation(*label_value);
        const std::string norm = util::to_lower(raw);
        if (norm == "yes") {
            out.category = ResponseCategory::valid;
            out.label = Label::yes;
        } else if (norm == "no") {
            out.category = ResponseCategory::valid;
            out.label = Label::no;
        } else {
            out.category = ResponseCategory::indeterminate;
            if (!raw.empty()) out.raw_label_text = raw;
            else out.missing_directive = true;
        }
        return out;
    }

    if (refusals.matches(out.body_without_thinking)) {
        out.category = ResponseCategory::failure_refusal;
        return out;
    }

    out.category = ResponseCategory::indeterminate;
    out.missing_directive = true;
    return out;
}

ParsedResponse parse(const RunRecord& record, const ModelSpec& model,
                     const RefusalPatterns& refusals) {
    return parse_response(record.response_text, record.finish_reason, model.is_reasoning,
                          refusals, model.think_open, model.think_close);
}

double invalid_rate(const std::vector<ParsedResponse>& parsed) {
    if (parsed.empty()) throw MathError("invalid_rate over an empty list");
    std::size_t invalid = 0;
    for (const auto& p : parsed) {
        if (p.category != ResponseCategory::valid) ++invalid;
    }
    return static_cast<double>(invalid) / static_cast<double>(parsed.size());
}

} // namespace policyeval
