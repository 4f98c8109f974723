#include "policyeval/metrics.hpp"

#include "policyeval/errors.hpp"

#include <algorithm>

namespace policyeval {

ConfusionCounts confusion_counts(const std::map<std::string, Label>& preds,
                                 const std::map<std::string, Label>& gold) {
    std::string missing_in_preds;
    std::string missing_in_gold;
    for (const auto& [id, _] : gold) {
        if (!preds.count(id)) missing_in_preds += " " + id;
    }
    for (const auto& [id, _] : preds) {
        if (!gold.count(id)) missing_in_gold += " " + id;
    }
    if (!missing_in_preds.empty() || !missing_in_gold.empty()) {
        std::string msg = "prediction/gold key mismatch;";
        if (!missing_in_preds.empty()) msg += " missing predictions for:" + missing_in_preds;
        if (!missing_in_gold.empty()) msg += " predictions without gold:" + missing_in_gold;
        throw MathError(msg);
    }

    ConfusionCounts counts;
    for (const auto& [id, predicted] : preds) {
        const Label truth = gold.at(id);
        if (predicted == Label::yes) {
            if (truth == Label::yes) ++counts.tp;
            else ++counts.fp;
        } else {
            if (truth == Label::yes) ++counts.fn;
            else ++counts.tn;
        }
    }
    return counts;
}

ScoreTriple score_from_counts(const ConfusionCounts& counts) {
    ScoreTriple score;
    const std::size_t predicted_pos = counts.tp + counts.fp;
    const std::size_t actual_pos = counts.tp + counts.fn;
    if (predicted_pos == 0) {
        score.degenerate_precision = true;
    } else {
        score.precision = static_cast<double>(counts.tp) / predicted_pos;
    }
    if (actual_pos == 0) {
        score.degenerate_recall = true;
    } else {
        score.recall = static_cast<double>(counts.tp) / actual_pos;
    }
    const double pr = score.precision + score.recall;
    score.f1 = pr > 0 ? 2.0 * score.precision * score.recall / pr : 0.0;
    return score;
}

ScoreTriple score_positive_class(const std::map<std::string, Label>& preds,
                                 const std::map<std::string, Label>& gold) {
    return score_from_counts(confusion_counts(preds, gold));
}

MajorityVote majority_vote(const std::vector<ParsedResponse>& runs) {
    if (runs.empty()) throw MathError("majority_vote over an empty run list");
    MajorityVote vote;
    for (const auto& run : runs) {
        if (run.category == ResponseCategory::valid && run.label) {
            if (*run.label == Label::yes) ++vote.yes_votes;
            else ++vote.no_votes;
        } else {
            ++vote.invalid_runs;
        }
    }
    if (vote.yes_votes == 0 && vote.no_votes == 0) return vote;
    if (vote.yes_votes > vote.no_votes) {
        vote.label = Label::yes;
    } else if (vote.no_votes > vote.yes_votes) {
        vote.label = Label::no;
    } else {
        // Tie policy: the conservative negative class, flagged.
        vote.label = Label::no;
        vote.tie = true;
    }
    return vote;
}

ScoreTriple average_over_runs(const std::vector<ScoreTriple>& per_run_scores) {
    if (per_run_scores.empty()) throw MathError("average_over_runs over an empty list");
    ScoreTriple mean;
    for (const auto& s : per_run_scores) {
        mean.precision += s.precision;
        mean.recall += s.recall;
        mean.f1 += s.f1;
        mean.degenerate_precision |= s.degenerate_precision;
        mean.degenerate_recall |= s.degenerate_recall;
    }
    const double n = static_cast<double>(per_run_scores.size());
    mean.precision /= n;
    mean.recall /= n;
    mean.f1 /= n;
    return mean;
}

double delta(const ScoreTriple& base, const ScoreTriple& other) { return other.f1 - base.f1; }

} // namespace policyeval
