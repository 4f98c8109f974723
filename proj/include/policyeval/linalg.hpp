#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace policyeval::linalg {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
};

struct SymEigen {
    std::vector<double> values; // descending
    Matrix vectors;             // column j is the eigenvector of values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix; converges to
// near machine precision.
SymEigen jacobi_eigen_sym(Matrix a);

struct PcaResult {
    Matrix projected;  // rows x target_dim
    Matrix components; // cols x target_dim, columns are the principal axes
    std::vector<double> column_means;
    std::vector<double> explained_variance;       // per kept axis
    std::vector<double> explained_variance_ratio; // per kept axis
};

// Mean-centered projection onto the top target_dim principal axes,
// descending by explained variance. The sign of each axis is fixed so its
// largest-magnitude loading is positive (ties broken by the first index).
// Requires target_dim <= min(rows-1, cols); throws MathError when the
// achievable rank is below target_dim, reporting the achievable rank.
PcaResult pca(const Matrix& x, std::size_t target_dim);

double squared_euclidean(std::span<const double> a, std::span<const double> b);

// Neighborhood-preservation score in [0, 1] for a dimensionality
// reduction:
//   T(k) = 1 - 2/(n*k*(2n-3k-1)) * sum_i sum_{j in U_k(i)} (r(i,j) - k)
// where U_k(i) are the reduced-space k-neighbors of i that are not among
// the original-space k-neighbors, and r is the original-space rank.
// Neighbor order uses Euclidean distance with index tie-breaks.
// Requires 1 <= k < rows/2.
double trustworthiness(const Matrix& original, const Matrix& reduced, std::size_t k);

} // namespace policyeval::linalg
