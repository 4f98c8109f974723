#pragma once

#include "policyeval/parsing.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace policyeval {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

struct ScoreTriple {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Set when the respective denominator was zero and the value was
    // pinned to 0 rather than left undefined.
    bool degenerate_precision = false;
    bool degenerate_recall = false;
};

// "yes" predictions against "antisemitic" gold; the positive class is the
// antisemitic one throughout.
ConfusionCounts confusion_counts(const std::map<std::string, Label>& preds,
                                 const std::map<std::string, Label>& gold);

ScoreTriple score_from_counts(const ConfusionCounts& counts);

// Key sets must match exactly; the error lists the difference.
ScoreTriple score_positive_class(const std::map<std::string, Label>& preds,
                                 const std::map<std::string, Label>& gold);

struct MajorityVote {
    std::optional<Label> label; // absent when no run was valid
    bool tie = false;           // equal yes/no counts, resolved to "no"
    std::size_t yes_votes = 0;
    std::size_t no_votes = 0;
    std::size_t invalid_runs = 0;
};

// Counts yes vs no over valid runs only. Strict majority wins; a tie is
// scored as "no" with the flag set; zero valid runs leaves the label
// absent so the post drops out of scoring.
MajorityVote majority_vote(const std::vector<ParsedResponse>& runs);

ScoreTriple average_over_runs(const std::vector<ScoreTriple>& per_run_scores);

// other.f1 - base.f1 (a negative delta is a performance decrease)
double delta(const ScoreTriple& base, const ScoreTriple& other);

} // namespace policyeval
