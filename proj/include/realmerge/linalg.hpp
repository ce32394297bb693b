#pragma once

#include <cstddef>
#include <vector>

namespace realmerge::linalg {

using Vec = std::vector<double>;

// Dense row-major matrix. Sized for desk-scale work: layer slices, Gram
// matrices, projector bases.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(size_t rows, size_t cols, Vec data);

    static Matrix identity(size_t n);
    static Matrix from_rows(const std::vector<Vec> & rows);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t numel() const { return data_.size(); }

    double & operator()(size_t i, size_t j) { return data_[i * cols_ + j]; }
    double operator()(size_t i, size_t j) const { return data_[i * cols_ + j]; }

    Vec & data() { return data_; }
    const Vec & data() const { return data_; }

    Matrix transposed() const;
    Matrix matmul(const Matrix & b) const;
    Vec matvec(const Vec & x) const;   // A x
    Vec tmatvec(const Vec & x) const;  // A^T x
    double fro_norm() const;

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    Vec data_;
};

// Thin SVD a = u * diag(s) * v^T with q = min(rows, cols) columns.
// Invariants on return:
//   - s nonincreasing, all entries >= 0
//   - u^T u = I and v^T v = I to 1e-10
//   - reconstruction error <= 1e-9 * (1 + ||a||_F)
//   - sign convention: in each column of v the entry of largest magnitude
//     (ties: lowest index) is nonnegative
struct SvdResult {
    Matrix u;
    Vec s;
    Matrix v;
    size_t sweeps = 0;      // Jacobi sweeps actually run
    double residual = 0.0;  // final off-diagonal residual, relative
};

SvdResult thin_svd(const Matrix & a);

// Top-k right singular vectors of the N x D row matrix via the N x N Gram
// matrix; intended for N << D. v holds k orthonormal columns of length D,
// s the corresponding singular values. Eigenvalues below 1e-12 * trace(G)
// count as rank-deficient; asking for k beyond that rank is an error.
struct GramBasis {
    Matrix v;
    Vec s;
};

GramBasis gram_right_singular(const std::vector<Vec> & rows, size_t k);

// Best rank-r approximation (Eckart-Young). Requires 1 <= r <= min(m, n).
Matrix truncate_rank(const Matrix & a, size_t r);

// sqrt(sum of squared singular values past the first r); r = 0 gives ||a||_F.
double tail_energy(const Matrix & a, size_t r);

// sin of the principal angle between nonzero vectors. Computed from the
// rejection of a off b, which stays accurate for nearly parallel inputs
// where 1 - cos^2 cancels.
double sin_angle(const Vec & a, const Vec & b);

// Orthonormal basis as columns; project(x) = basis basis^T x.
struct Projector {
    Matrix basis;

    size_t dim() const { return basis.rows(); }
    size_t rank() const { return basis.cols(); }
};

Vec project(const Projector & p, const Vec & x);
Vec reject(const Projector & p, const Vec & x);

} // namespace realmerge::linalg
