#include "policyeval/divergence.hpp"

#include "policyeval/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace policyeval {

double cos_dist(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw MathError("cos_dist: dimension mismatch");
    double dot = 0, nu = 0, nv = 0;
    bool all_equal = true;
    bool all_negated = true;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
        all_equal &= u[i] == v[i];
        all_negated &= u[i] == -v[i];
    }
    if (nu == 0 || nv == 0) throw MathError("cos_dist: zero vector");
    // Identical and antipodal rows hit the endpoints exactly; the general
    // formula would leave them half an ulp off.
    if (all_equal) return 0.0;
    if (all_negated) return 1.0;
    double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    c = std::clamp(c, -1.0, 1.0);
    return (1.0 - c) / 2.0;
}

std::vector<double> cross_model_distribution(const std::string& a, const std::string& b,
                                             const EmbeddingMatrix& m) {
    const auto rows_a = m.rows_for_model(a);
    const auto index_b = m.post_index_for_model(b);
    std::vector<double> out;
    out.reserve(rows_a.size());
    for (std::size_t ra : rows_a) {
        auto it = index_b.find(m.key(ra).post_id);
        if (it == index_b.end()) continue;
        out.push_back(cos_dist(m.row(ra), m.row(it->second)));
    }
    if (out.empty())
        throw MathError("no shared posts between models " + a + " and " + b);
    return out;
}

namespace {

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

} // namespace

std::vector<double> SemanticDistanceVector::values() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& [_, v] : entries) out.push_back(v);
    return out;
}

SemanticDistanceVector sdv(const std::string& a, const std::vector<std::string>& roster,
                           const EmbeddingMatrix& m) {
    if (roster.size() < 2) throw MathError("sdv needs a roster of at least 2 models");
    if (std::find(roster.begin(), roster.end(), a) == roster.end())
        throw MathError("sdv: model " + a + " is not in the roster");
    SemanticDistanceVector out;
    out.owner_model = a;
    for (const auto& other : roster) {
        if (other == a) continue;
        out.entries.emplace_back(other, median(cross_model_distribution(a, other, m)));
    }
    return out;
}

double scmd(const SemanticDistanceVector& v) {
    if (v.entries.empty()) throw MathError("scmd over an empty distance vector");
    double sum = 0;
    for (const auto& [_, d] : v.entries) sum += d;
    return sum / static_cast<double>(v.entries.size());
}

std::vector<std::tuple<std::string, double, double>> pca_cluster_models(
    const std::vector<SemanticDistanceVector>& sdvs) {
    if (sdvs.size() < 3) throw MathError("pca_cluster_models needs at least 3 models");
    const std::size_t width = sdvs.front().entries.size();
    linalg::Matrix stacked(sdvs.size(), width);
    for (std::size_t i = 0; i < sdvs.size(); ++i) {
        if (sdvs[i].entries.size() != width)
            throw MathError("pca_cluster_models: inconsistent SDV widths");
        for (std::size_t j = 0; j < width; ++j)
            stacked.at(i, j) = sdvs[i].entries[j].second;
    }

    // Identical SDVs have no variance to decompose; every point sits at
    // the origin after centering.
    double spread = 0;
    for (std::size_t j = 0; j < width; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < sdvs.size(); ++i) mean += stacked.at(i, j);
        mean /= static_cast<double>(sdvs.size());
        for (std::size_t i = 0; i < sdvs.size(); ++i)
            spread = std::max(spread, std::abs(stacked.at(i, j) - mean));
    }
    std::vector<std::tuple<std::string, double, double>> out;
    if (spread == 0.0) {
        for (const auto& v : sdvs) out.emplace_back(v.owner_model, 0.0, 0.0);
        return out;
    }

    auto result = linalg::pca(stacked, 2);
    for (std::size_t i = 0; i < sdvs.size(); ++i) {
        out.emplace_back(sdvs[i].owner_model, result.projected.at(i, 0),
                         result.projected.at(i, 1));
    }
    return out;
}

IntraModelMatrix intra_model_matrix(const std::string& model, const EmbeddingMatrix& m,
                                    const std::map<std::string, Label>& preds) {
    const auto rows = m.rows_for_model(model);
    if (rows.empty()) throw MathError("no rows for model " + model);

    std::vector<std::size_t> ordered;
    ordered.reserve(rows.size());
    for (std::size_t r : rows) {
        auto it = preds.find(m.key(r).post_id);
        if (it == preds.end())
            throw MathError("missing prediction for post " + m.key(r).post_id);
        if (it->second == Label::yes) ordered.push_back(r);
    }
    const std::size_t positives = ordered.size();
    for (std::size_t r : rows) {
        if (preds.at(m.key(r).post_id) == Label::no) ordered.push_back(r);
    }

    IntraModelMatrix out;
    const std::size_t n = ordered.size();
    out.distances = linalg::Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.post_ids.push_back(m.key(ordered[i]).post_id);
        out.labels.push_back(i < positives ? Label::yes : Label::no);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = cos_dist(m.row(ordered[i]), m.row(ordered[j]));
            out.distances.at(i, j) = d;
            out.distances.at(j, i) = d;
        }
    }

    auto group_mean = [&](std::size_t begin, std::size_t end) -> std::optional<double> {
        if (end - begin < 2) return std::nullopt;
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = i + 1; j < end; ++j) {
                sum += out.distances.at(i, j);
                ++count;
            }
        }
        return sum / static_cast<double>(count);
    };
    out.summary.within_positive = group_mean(0, positives);
    out.summary.within_negative = group_mean(positives, n);
    if (positives > 0 && positives < n) {
        double sum = 0;
        for (std::size_t i = 0; i < positives; ++i)
            for (std::size_t j = positives; j < n; ++j) sum += out.distances.at(i, j);
        out.summary.cross =
            sum / static_cast<double>(positives * (n - positives));
    }
    return out;
}

namespace {

// First k entries of a seeded partial Fisher-Yates shuffle of `pool`.
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t k, std::mt19937_64& gen) {
    for (std::size_t t = 0; t < k; ++t) {
        const std::size_t j = t + static_cast<std::size_t>(gen() % (pool.size() - t));
        std::swap(pool[t], pool[j]);
    }
}

} // namespace

std::vector<double> cohesion_scores(const EmbeddingMatrix& group_rows, std::size_t k,
                                    std::uint64_t seed) {
    const std::size_t n = group_rows.rows();
    if (k < 1) throw MathError("cohesion_scores needs k >= 1");
    if (n <= k)
        throw MathError("group size " + std::to_string(n) +
                        " must exceed k=" + std::to_string(k) + "; use a smaller k");
    std::mt19937_64 gen(seed);
    std::vector<double> scores(n, 0.0);
    std::vector<std::size_t> pool;
    pool.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        pool.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) pool.push_back(j);
        }
        partial_shuffle(pool, k, gen);
        double sum = 0;
        for (std::size_t t = 0; t < k; ++t)
            sum += cos_dist(group_rows.row(i), group_rows.row(pool[t]));
        scores[i] = sum / static_cast<double>(k);
    }
    return scores;
}

std::vector<double> pairwise_group_distances(const EmbeddingMatrix& group_rows,
                                             std::size_t sample_size, std::uint64_t seed) {
    const std::size_t n = group_rows.rows();
    if (sample_size < 2) throw MathError("pairwise_group_distances needs sample_size >= 2");
    if (n < sample_size)
        throw MathError("group size " + std::to_string(n) + " is below sample size " +
                        std::to_string(sample_size));
    std::mt19937_64 gen(seed);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    partial_shuffle(pool, sample_size, gen);
    std::vector<double> out;
    out.reserve(sample_size * (sample_size - 1) / 2);
    for (std::size_t a = 0; a < sample_size; ++a) {
        for (std::size_t b = a + 1; b < sample_size; ++b) {
            out.push_back(cos_dist(group_rows.row(pool[a]), group_rows.row(pool[b])));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

const char* ks_alternative_name(KsAlternative a) {
    switch (a) {
    case KsAlternative::two_sided: return "two_sided";
    case KsAlternative::greater: return "greater";
    case KsAlternative::less: return "less";
    }
    return "?";
}

namespace {

struct KsStatistics {
    double d_two = 0;     // sup |F_pos - F_neg|
    double d_greater = 0; // sup (F_pos - F_neg)
    double d_less = 0;    // sup (F_neg - F_pos)
};

// Walk the sorted union, evaluating both ECDFs after consuming every tie.
KsStatistics ks_statistics(std::vector<double> pos, std::vector<double> neg) {
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    const std::size_t m = pos.size();
    const std::size_t n = neg.size();
    KsStatistics out;
    std::size_t i = 0, j = 0;
    while (i < m || j < n) {
        double v;
        if (i < m && j < n) v = std::min(pos[i], neg[j]);
        else if (i < m) v = pos[i];
        else v = neg[j];
        while (i < m && pos[i] == v) ++i;
        while (j < n && neg[j] == v) ++j;
        const double f_pos = static_cast<double>(i) / static_cast<double>(m);
        const double f_neg = static_cast<double>(j) / static_cast<double>(n);
        out.d_greater = std::max(out.d_greater, f_pos - f_neg);
        out.d_less = std::max(out.d_less, f_neg - f_pos);
    }
    out.d_two = std::max(out.d_greater, out.d_less);
    return out;
}

// Asymptotic two-sided survival function:
//   Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)
double kolmogorov_two_sided_p(double statistic, std::size_t m, std::size_t n) {
    const double en = std::sqrt(static_cast<double>(m) * static_cast<double>(n) /
                                static_cast<double>(m + n));
    const double lambda = statistic * en;
    if (lambda < 1e-9) return 1.0;
    double sum = 0;
    double sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

double one_sided_p(double statistic, std::size_t m, std::size_t n) {
    const double scale = static_cast<double>(m) * static_cast<double>(n) /
                         static_cast<double>(m + n);
    return std::clamp(std::exp(-2.0 * statistic * statistic * scale), 0.0, 1.0);
}

} // namespace

KsResult ks_two_sample(const std::vector<double>& d_pos, const std::vector<double>& d_neg,
                       KsAlternative alternative) {
    if (d_pos.empty() || d_neg.empty())
        throw MathError("ks_two_sample requires two non-empty samples");
    const KsStatistics stats = ks_statistics(d_pos, d_neg);
    KsResult out;
    out.alternative = alternative;
    out.m = d_pos.size();
    out.n = d_neg.size();
    switch (alternative) {
    case KsAlternative::two_sided:
        out.statistic = stats.d_two;
        out.p_value = kolmogorov_two_sided_p(out.statistic, out.m, out.n);
        break;
    case KsAlternative::greater:
        out.statistic = stats.d_greater;
        out.p_value = one_sided_p(out.statistic, out.m, out.n);
        break;
    case KsAlternative::less:
        out.statistic = stats.d_less;
        out.p_value = one_sided_p(out.statistic, out.m, out.n);
        break;
    }
    return out;
}

std::string significance_stars(double p_value) {
    if (p_value < 0.001) return "***";
    if (p_value < 0.01) return "**";
    if (p_value < 0.05) return "*";
    return "";
}

const char* cohesion_verdict_name(CohesionVerdict v) {
    switch (v) {
    case CohesionVerdict::no_difference: return "no_difference";
    case CohesionVerdict::positive_more_cohesive: return "positive_more_cohesive";
    case CohesionVerdict::positive_less_cohesive: return "positive_less_cohesive";
    case CohesionVerdict::crossing: return "crossing";
    }
    return "?";
}

CohesionVerdict crossing_verdict(const KsResult& two_sided, const KsResult& greater,
                                 const KsResult& less, double alpha) {
    if (two_sided.p_value >= alpha) return CohesionVerdict::no_difference;
    const bool g = greater.p_value < alpha;
    const bool l = less.p_value < alpha;
    if (g && l) return CohesionVerdict::crossing;
    if (g) return CohesionVerdict::positive_more_cohesive;
    if (l) return CohesionVerdict::positive_less_cohesive;
    return CohesionVerdict::no_difference;
}

// ---------------------------------------------------------------------------
// Reduction

ReducedEmbedding reduce_pca_detail(const EmbeddingMatrix& m, std::size_t target_dim) {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (m.present(i)) present.push_back(i);
    }
    if (present.empty()) throw MathError("reduce_pca over an empty matrix");

    linalg::Matrix x(present.size(), m.width());
    for (std::size_t i = 0; i < present.size(); ++i) {
        auto row = m.row(present[i]);
        std::copy(row.begin(), row.end(), x.row(i).begin());
    }
    auto result = linalg::pca(x, target_dim);

    ReducedEmbedding out;
    out.explained_variance_ratio = result.explained_variance_ratio;
    EmbeddingMatrix reduced(target_dim);
    std::size_t next_present = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (m.present(i)) {
            reduced.add_row(m.key(i), result.projected.row(next_present++));
        } else {
            reduced.add_missing_row(m.key(i));
        }
    }
    out.matrix = std::move(reduced);
    return out;
}

EmbeddingMatrix reduce_pca(const EmbeddingMatrix& m, std::size_t target_dim) {
    return reduce_pca_detail(m, target_dim).matrix;
}

double trustworthiness(const EmbeddingMatrix& original, const EmbeddingMatrix& reduced,
                       std::size_t k) {
    if (original.rows() != reduced.rows())
        throw MathError("trustworthiness: row count mismatch");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < original.rows(); ++i) {
        if (original.present(i) && reduced.present(i)) rows.push_back(i);
    }
    linalg::Matrix a(rows.size(), original.width());
    linalg::Matrix b(rows.size(), reduced.width());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto ra = original.row(rows[i]);
        std::copy(ra.begin(), ra.end(), a.row(i).begin());
        auto rb = reduced.row(rows[i]);
        std::copy(rb.begin(), rb.end(), b.row(i).begin());
    }
    return linalg::trustworthiness(a, b, k);
}

std::size_t choose_dim_by_trustworthiness(const EmbeddingMatrix& m,
                                          const std::vector<std::size_t>& candidates,
                                          std::size_t k) {
    if (candidates.empty()) throw MathError("no candidate dimensions");
    std::size_t best_dim = 0;
    double best_t = -1.0;
    for (std::size_t dim : candidates) {
        auto reduced = reduce_pca(m, dim);
        const double t = trustworthiness(m, reduced, k);
        if (t > best_t) {
            best_t = t;
            best_dim = dim;
        }
    }
    return best_dim;
}

} // namespace policyeval
