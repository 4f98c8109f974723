#include "policyeval/corpus.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace policyeval {

using nlohmann::json;

GoldLabel parse_gold_label(const std::string& raw) {
    const std::string v = util::to_lower(util::trim(raw));
    if (v == "1" || v == "yes" || v == "antisemitic") return GoldLabel::antisemitic;
    if (v == "0" || v == "no" || v == "non-antisemitic") return GoldLabel::non_antisemitic;
    throw IngestError("unknown label string: \"" + raw + "\"");
}

const char* gold_label_name(GoldLabel label) {
    return label == GoldLabel::antisemitic ? "antisemitic" : "non-antisemitic";
}

namespace {

// RFC 4180: fields may be quoted; quotes escape as ""; records may span
// lines inside quoted fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    size_t i = 0;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        bool blank = record.size() == 1 && record[0].empty();
        if (!blank) records.push_back(record);
        record.clear();
    };
    while (i < content.size()) {
        char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_record();
        } else {
            field.push_back(c);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) throw IngestError("unterminated quoted field in delimited input");
    if (!field.empty() || !record.empty()) end_record();
    return records;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void check_post(std::vector<Post>& posts, std::unordered_set<std::string>& seen_ids,
                size_t record_index, const std::string& id, const std::string& text,
                const std::string& label_raw) {
    if (util::trim(id).empty())
        throw IngestError("record " + std::to_string(record_index) + ": empty id");
    if (util::trim(text).empty())
        throw IngestError("record " + std::to_string(record_index) + ": empty text for id \"" +
                          id + "\"");
    if (!seen_ids.insert(id).second)
        throw IngestError("record " + std::to_string(record_index) + ": duplicate id \"" + id +
                          "\"");
    GoldLabel label;
    try {
        label = parse_gold_label(label_raw);
    } catch (const IngestError& e) {
        throw IngestError("record " + std::to_string(record_index) + ": " + e.what());
    }
    posts.push_back(Post{id, text, label});
}

std::vector<Post> load_delimited(const std::filesystem::path& path) {
    const std::string content = util::read_file(path);
    auto records = parse_csv(content);
    if (records.empty()) throw IngestError("no records in " + path.string());
    const auto& header = records.front();
    auto column = [&](const char* name) -> size_t {
        for (size_t i = 0; i < header.size(); ++i) {
            if (util::iequals(util::trim(header[i]), name)) return i;
        }
        throw IngestError("delimited input missing header column \"" + std::string(name) + "\"");
    };
    const size_t id_col = column("id");
    const size_t text_col = column("text");
    const size_t label_col = column("label");
    if (records.size() == 1) throw IngestError("no records in " + path.string());

    std::vector<Post> posts;
    std::unordered_set<std::string> seen;
    for (size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        const size_t needed = std::max({id_col, text_col, label_col}) + 1;
        if (rec.size() < needed)
            throw IngestError("record " + std::to_string(r - 1) + ": expected at least " +
                              std::to_string(needed) + " fields, got " +
                              std::to_string(rec.size()));
        check_post(posts, seen, r - 1, rec[id_col], rec[text_col], rec[label_col]);
    }
    return posts;
}

std::vector<Post> load_line_json(const std::filesystem::path& path) {
    std::vector<Post> posts;
    std::unordered_set<std::string> seen;
    size_t record_index = 0;
    util::for_each_line(path, [&](std::size_t, std::string_view line) {
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw IngestError("record " + std::to_string(record_index) + ": bad json: " +
                              e.what());
        }
        for (const char* key : {"id", "text", "label"}) {
            if (!obj.contains(key))
                throw IngestError("record " + std::to_string(record_index) +
                                  ": missing field \"" + key + "\"");
        }
        std::string id = obj.at("id").is_string() ? obj.at("id").get<std::string>()
                                                  : obj.at("id").dump();
        std::string label = obj.at("label").is_string() ? obj.at("label").get<std::string>()
                                                        : obj.at("label").dump();
        check_post(posts, seen, record_index, id, obj.at("text").get<std::string>(), label);
        ++record_index;
    });
    if (posts.empty()) throw IngestError("no records in " + path.string());
    return posts;
}

} // namespace

std::vector<Post> load_corpus(const std::filesystem::path& path, CorpusFormat format) {
    return format == CorpusFormat::delimited ? load_delimited(path) : load_line_json(path);
}

void write_corpus(const std::filesystem::path& path, const std::vector<Post>& corpus,
                  CorpusFormat format) {
    std::ostringstream out;
    if (format == CorpusFormat::delimited) {
        out << "id,text,label\n";
        for (const auto& p : corpus) {
            out << csv_escape(p.post_id) << ',' << csv_escape(p.text) << ','
                << gold_label_name(p.gold_label) << '\n';
        }
    } else {
        for (const auto& p : corpus) {
            json obj;
            obj["id"] = p.post_id;
            obj["text"] = p.text;
            obj["label"] = gold_label_name(p.gold_label);
            out << obj.dump() << '\n';
        }
    }
    util::write_file(path, out.str());
}

CorpusStats corpus_stats(const std::vector<Post>& corpus) {
    CorpusStats stats;
    stats.total = corpus.size();
    for (const auto& p : corpus) {
        if (p.gold_label == GoldLabel::antisemitic) ++stats.positives;
    }
    stats.negatives = stats.total - stats.positives;
    stats.positive_rate =
        stats.total == 0 ? 0.0 : static_cast<double>(stats.positives) / stats.total;
    return stats;
}

std::vector<Post> subset(const std::vector<Post>& corpus,
                         const std::unordered_set<std::string>& keep_ids) {
    std::unordered_set<std::string> missing = keep_ids;
    for (const auto& p : corpus) missing.erase(p.post_id);
    if (!missing.empty()) {
        std::vector<std::string> sorted(missing.begin(), missing.end());
        std::sort(sorted.begin(), sorted.end());
        std::string msg = "ids not in corpus:";
        for (const auto& id : sorted) msg += " " + id;
        throw IngestError(msg);
    }
    std::vector<Post> out;
    out.reserve(keep_ids.size());
    for (const auto& p : corpus) {
        if (keep_ids.count(p.post_id)) out.push_back(p);
    }
    return out;
}

} // namespace policyeval
