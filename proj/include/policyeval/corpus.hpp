#pragma once

#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

namespace policyeval {

enum class GoldLabel { antisemitic, non_antisemitic };

struct Post {
    std::string post_id;
    std::string text;
    GoldLabel gold_label = GoldLabel::non_antisemitic;
};

struct CorpusStats {
    std::size_t total = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double positive_rate = 0.0;
};

enum class CorpusFormat { delimited, line_json };

// Accepted label spellings (case-insensitive):
//   positive: "1", "yes", "antisemitic"
//   negative: "0", "no", "non-antisemitic"
GoldLabel parse_gold_label(const std::string& raw);
const char* gold_label_name(GoldLabel label);

// Delimited input is RFC 4180 CSV with a header row naming id, text, label.
// Line-json input is one object per line with keys "id", "text", "label".
// Throws IngestError on empty files, missing fields, unknown labels, or
// duplicate ids; text must be non-empty after whitespace trim.
std::vector<Post> load_corpus(const std::filesystem::path& path, CorpusFormat format);

void write_corpus(const std::filesystem::path& path, const std::vector<Post>& corpus,
                  CorpusFormat format);

CorpusStats corpus_stats(const std::vector<Post>& corpus);

// Order-preserving filter; every requested id must exist in the corpus.
std::vector<Post> subset(const std::vector<Post>& corpus,
                         const std::unordered_set<std::string>& keep_ids);

} // namespace policyeval
