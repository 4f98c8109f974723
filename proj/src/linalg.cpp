#include "policyeval/linalg.hpp"

#include "policyeval/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace policyeval::linalg {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m;
    if (rows.empty()) return m;
    m.rows = rows.size();
    m.cols = rows.front().size();
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw MathError("ragged rows in matrix construction");
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

SymEigen jacobi_eigen_sym(Matrix a) {
    if (a.rows != a.cols) throw MathError("jacobi_eigen_sym needs a square matrix");
    const std::size_t n = a.rows;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    auto off_norm_sq = [&] {
        double s = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) s += a.at(p, q) * a.at(p, q);
        return s;
    };
    double frob_sq = 0;
    for (double x : a.data) frob_sq += x * x;
    const double tol = std::max(frob_sq, 1e-300) * 1e-30;

    for (int sweep = 0; sweep < 100 && off_norm_sq() > tol; ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a.at(i, p);
                    const double aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a.at(p, i);
                    const double aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p);
                    const double viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a.at(i, i) > a.at(j, j); });

    SymEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a.at(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = v.at(i, order[j]);
    }
    return out;
}

namespace {

void fix_component_sign(Matrix& components, std::size_t column) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < components.rows; ++i) {
        const double a = std::abs(components.at(i, column));
        if (a > best_abs) {
            best_abs = a;
            best = i;
        }
    }
    if (components.at(best, column) < 0) {
        for (std::size_t i = 0; i < components.rows; ++i)
            components.at(i, column) = -components.at(i, column);
    }
}

} // namespace

PcaResult pca(const Matrix& x, std::size_t target_dim) {
    const std::size_t n = x.rows;
    const std::size_t w = x.cols;
    if (n < 2) throw MathError("pca needs at least 2 rows");
    if (target_dim < 1) throw MathError("pca target_dim must be >= 1");
    const std::size_t max_dim = std::min(n - 1, w);
    if (target_dim > max_dim)
        throw MathError("pca target_dim " + std::to_string(target_dim) +
                        " exceeds min(rows-1, width) = " + std::to_string(max_dim));

    PcaResult out;
    out.column_means.assign(w, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out.column_means[j] += x.at(i, j);
    for (auto& m : out.column_means) m /= static_cast<double>(n);

    Matrix centered(n, w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
            centered.at(i, j) = x.at(i, j) - out.column_means[j];

    Matrix cov(w, w);
    for (std::size_t a = 0; a < w; ++a) {
        for (std::size_t b = a; b < w; ++b) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += centered.at(i, a) * centered.at(i, b);
            s /= static_cast<double>(n - 1);
            cov.at(a, b) = s;
            cov.at(b, a) = s;
        }
    }

    SymEigen eig = jacobi_eigen_sym(cov);
    const double lead = eig.values.empty() ? 0.0 : std::max(eig.values.front(), 0.0);
    std::size_t rank = 0;
    for (double v : eig.values) {
        if (v > lead * 1e-12 && v > 0) ++rank;
    }
    if (rank < target_dim)
        throw MathError("pca rank deficient: achievable rank " + std::to_string(rank) +
                        " is below requested target_dim " + std::to_string(target_dim));

    out.components = Matrix(w, target_dim);
    for (std::size_t j = 0; j < target_dim; ++j)
        for (std::size_t i = 0; i < w; ++i) out.components.at(i, j) = eig.vectors.at(i, j);
    for (std::size_t j = 0; j < target_dim; ++j) fix_component_sign(out.components, j);

    double total_var = 0;
    for (double v : eig.values) total_var += std::max(v, 0.0);
    out.explained_variance.assign(eig.values.begin(), eig.values.begin() + target_dim);
    out.explained_variance_ratio.resize(target_dim);
    for (std::size_t j = 0; j < target_dim; ++j)
        out.explained_variance_ratio[j] =
            total_var > 0 ? std::max(eig.values[j], 0.0) / total_var : 0.0;

    out.projected = Matrix(n, target_dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < target_dim; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < w; ++c)
                s += centered.at(i, c) * out.components.at(c, j);
            out.projected.at(i, j) = s;
        }
    }
    return out;
}

double squared_euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

namespace {

// Indices of all other points ordered by (distance to i, index).
std::vector<std::size_t> neighbor_order(const Matrix& m, std::size_t i) {
    std::vector<std::size_t> order;
    order.reserve(m.rows - 1);
    for (std::size_t j = 0; j < m.rows; ++j) {
        if (j != i) order.push_back(j);
    }
    std::vector<double> dist(m.rows, 0.0);
    for (std::size_t j : order) dist[j] = squared_euclidean(m.row(i), m.row(j));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return a < b;
    });
    return order;
}

} // namespace

double trustworthiness(const Matrix& original, const Matrix& reduced, std::size_t k) {
    const std::size_t n = original.rows;
    if (reduced.rows != n) throw MathError("trustworthiness: row count mismatch");
    if (k < 1 || 2 * k >= n)
        throw MathError("trustworthiness requires 1 <= k < rows/2, got k=" + std::to_string(k) +
                        " for " + std::to_string(n) + " rows");

    double penalty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto orig_order = neighbor_order(original, i);
        const auto red_order = neighbor_order(reduced, i);
        std::vector<std::size_t> orig_rank(n, 0); // 1-based rank among neighbors of i
        for (std::size_t pos = 0; pos < orig_order.size(); ++pos)
            orig_rank[orig_order[pos]] = pos + 1;
        for (std::size_t pos = 0; pos < k; ++pos) {
            const std::size_t j = red_order[pos];
            if (orig_rank[j] > k) penalty += static_cast<double>(orig_rank[j] - k);
        }
    }
    const double nd = static_cast<double>(n);
    const double kd = static_cast<double>(k);
    return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

} // namespace policyeval::linalg
