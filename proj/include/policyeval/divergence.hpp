#pragma once

#include "policyeval/embedding.hpp"
#include "policyeval/parsing.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace policyeval {

// Normalized cosine distance: (1 - cos(u, v)) / 2, so 0 means identical
// direction and 1 means opposite. Zero vectors are an error.
double cos_dist(std::span<const double> u, std::span<const double> v);

// One distance per post shared by both models, matched by post id, in
// model a's row order. Errors when the shared set is empty.
std::vector<double> cross_model_distribution(const std::string& a, const std::string& b,
                                             const EmbeddingMatrix& m);

struct SemanticDistanceVector {
    std::string owner_model;
    // (other model, median distance), ordered by the fixed roster order
    // skipping the owner.
    std::vector<std::pair<std::string, double>> entries;

    std::vector<double> values() const;
};

// Median of the per-post distance distribution against every other roster
// model, one entry per non-owner model.
SemanticDistanceVector sdv(const std::string& a, const std::vector<std::string>& roster,
                           const EmbeddingMatrix& m);

// Mean of the SDV entries: the model's overall divergence from the roster.
double scmd(const SemanticDistanceVector& v);

// 2D PCA of the stacked SDV rows. All-identical SDVs project to
// coincident points at the origin; other rank deficiencies propagate the
// PCA error.
std::vector<std::tuple<std::string, double, double>> pca_cluster_models(
    const std::vector<SemanticDistanceVector>& sdvs);

struct GroupSummary {
    std::optional<double> within_positive; // mean distance inside G++
    std::optional<double> within_negative; // mean distance inside G--
    std::optional<double> cross;           // mean distance across G+-
};

struct IntraModelMatrix {
    std::vector<std::string> post_ids; // positives first, stable otherwise
    std::vector<Label> labels;         // predicted label per row
    linalg::Matrix distances;          // symmetric, zero diagonal
    GroupSummary summary;
};

// Pairwise cosine distances over one model's rows, reordered predicted-
// positives first. Requires a prediction for every indexed post.
IntraModelMatrix intra_model_matrix(const std::string& model, const EmbeddingMatrix& m,
                                    const std::map<std::string, Label>& preds);

// Per row: mean distance to k rows sampled uniformly without replacement
// from the group excluding the row itself, under the seeded generator.
// Requires group size > k.
std::vector<double> cohesion_scores(const EmbeddingMatrix& group_rows, std::size_t k,
                                    std::uint64_t seed);

// Alternative construction: sample `sample_size` rows from the group and
// return every within-sample pairwise distance.
std::vector<double> pairwise_group_distances(const EmbeddingMatrix& group_rows,
                                             std::size_t sample_size, std::uint64_t seed);

enum class KsAlternative { two_sided, greater, less };

const char* ks_alternative_name(KsAlternative a);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    KsAlternative alternative = KsAlternative::two_sided;
    std::size_t m = 0; // |d_pos|
    std::size_t n = 0; // |d_neg|
};

// Two-sample KS test over the ECDFs F_pos and F_neg:
//   two_sided: sup |F_pos - F_neg|, p by the asymptotic Kolmogorov series
//   greater:   sup (F_pos - F_neg), p = exp(-2 D^2 mn/(m+n))
//   less:      sup (F_neg - F_pos), same one-sided p form
// "greater" significant means positive-class distances are stochastically
// smaller (more cohesive).
KsResult ks_two_sample(const std::vector<double>& d_pos, const std::vector<double>& d_neg,
                       KsAlternative alternative);

// "***", "**", "*" at p < 0.001 / 0.01 / 0.05, else "".
std::string significance_stars(double p_value);

enum class CohesionVerdict {
    no_difference,
    positive_more_cohesive,
    positive_less_cohesive,
    crossing, // both one-sided tests significant: the ECDFs must cross
};

const char* cohesion_verdict_name(CohesionVerdict v);

CohesionVerdict crossing_verdict(const KsResult& two_sided, const KsResult& greater,
                                 const KsResult& less, double alpha);

struct ReducedEmbedding {
    EmbeddingMatrix matrix;
    std::vector<double> explained_variance_ratio;
};

// PCA over the present rows; keys and presence flags carry over. Missing
// rows stay missing in the output.
ReducedEmbedding reduce_pca_detail(const EmbeddingMatrix& m, std::size_t target_dim);
EmbeddingMatrix reduce_pca(const EmbeddingMatrix& m, std::size_t target_dim);

double trustworthiness(const EmbeddingMatrix& original, const EmbeddingMatrix& reduced,
                       std::size_t k);

// Smallest candidate dimension maximizing trustworthiness (first maximum
// wins on ties).
std::size_t choose_dim_by_trustworthiness(const EmbeddingMatrix& m,
                                          const std::vector<std::size_t>& candidates,
                                          std::size_t k);

} // namespace policyeval
