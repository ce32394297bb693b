#include "realmerge/linalg.hpp"

#include "realmerge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace realmerge::linalg {

Matrix::Matrix(size_t rows, size_t cols, Vec data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error(errc::shape_mismatch, "matrix data size does not match rows*cols");
    }
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; i++) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(const std::vector<Vec> & rows) {
    if (rows.empty()) {
        throw Error(errc::bad_argument, "from_rows: no rows");
    }
    const size_t n = rows[0].size();
    Matrix m(rows.size(), n);
    for (size_t i = 0; i < rows.size(); i++) {
        if (rows[i].size() != n) {
            throw Error(errc::shape_mismatch, "from_rows: ragged rows");
        }
        std::copy(rows[i].begin(), rows[i].end(), m.data().begin() + i * n);
    }
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (size_t i = 0; i < rows_; i++) {
        for (size_t j = 0; j < cols_; j++) {
            t(j, i) = (*this)(i, j);
        }
    }
    return t;
}

Matrix Matrix::matmul(const Matrix & b) const {
    if (cols_ != b.rows_) {
        throw Error(errc::shape_mismatch, "matmul: inner dimensions differ");
    }
    Matrix c(rows_, b.cols_);
    for (size_t i = 0; i < rows_; i++) {
        for (size_t k = 0; k < cols_; k++) {
            const double aik = (*this)(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (size_t j = 0; j < b.cols_; j++) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

Vec Matrix::matvec(const Vec & x) const {
    if (x.size() != cols_) {
        throw Error(errc::shape_mismatch, "matvec: size mismatch");
    }
    Vec y(rows_, 0.0);
    for (size_t i = 0; i < rows_; i++) {
        double acc = 0.0;
        const double * row = data_.data() + i * cols_;
        for (size_t j = 0; j < cols_; j++) {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
    return y;
}

Vec Matrix::tmatvec(const Vec & x) const {
    if (x.size() != rows_) {
        throw Error(errc::shape_mismatch, "tmatvec: size mismatch");
    }
    Vec y(cols_, 0.0);
    for (size_t i = 0; i < rows_; i++) {
        const double xi = x[i];
        if (xi == 0.0) {
            continue;
        }
        const double * row = data_.data() + i * cols_;
        for (size_t j = 0; j < cols_; j++) {
            y[j] += row[j] * xi;
        }
    }
    return y;
}

double Matrix::fro_norm() const {
    double s = 0.0;
    for (double x : data_) {
        s += x * x;
    }
    return std::sqrt(s);
}

namespace {

double col_dot(const Matrix & w, size_t p, size_t q) {
    double s = 0.0;
    for (size_t i = 0; i < w.rows(); i++) {
        s += w(i, p) * w(i, q);
    }
    return s;
}

void rotate_cols(Matrix & m, size_t p, size_t q, double cs, double sn) {
    for (size_t i = 0; i < m.rows(); i++) {
        const double a = m(i, p);
        const double b = m(i, q);
        m(i, p) = cs * a - sn * b;
        m(i, q) = sn * a + cs * b;
    }
}

// Deterministic replacement for a (near-)null column: the canonical basis
// vector farthest from span(cols 0..j-1 of u), then orthogonalized. With
// orthonormal leading columns the squared distance of e_i is
// 1 - sum_l u(i,l)^2, whose maximum over i is at least (m - j) / m.
void complete_column(Matrix & u, size_t j) {
    const size_t m = u.rows();
    if (j >= m) {
        throw Error(errc::degenerate_input, "could not complete orthonormal basis");
    }
    size_t best = 0;
    double best_score = -1.0;
    for (size_t e = 0; e < m; e++) {
        double in_span = 0.0;
        for (size_t l = 0; l < j; l++) {
            in_span += u(e, l) * u(e, l);
        }
        const double score = 1.0 - in_span;
        if (score > best_score) {
            best_score = score;
            best = e;
        }
    }
    Vec cand(m, 0.0);
    cand[best] = 1.0;
    for (int pass = 0; pass < 2; pass++) {
        for (size_t l = 0; l < j; l++) {
            double d = 0.0;
            for (size_t i = 0; i < m; i++) {
                d += u(i, l) * cand[i];
            }
            for (size_t i = 0; i < m; i++) {
                cand[i] -= d * u(i, l);
            }
        }
    }
    double nrm = 0.0;
    for (double x : cand) {
        nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    if (nrm <= 0.0) {
        throw Error(errc::degenerate_input, "could not complete orthonormal basis");
    }
    for (size_t i = 0; i < m; i++) {
        u(i, j) = cand[i] / nrm;
    }
}

// One-sided Jacobi on the columns of a, rows >= cols assumed.
SvdResult jacobi_svd_tall(const Matrix & a) {
    const size_t m = a.rows();
    const size_t n = a.cols();
    const double fro = a.fro_norm();

    SvdResult out;
    out.u = Matrix(m, n);
    out.v = Matrix::identity(n);
    out.s.assign(n, 0.0);

    if (fro == 0.0) {
        for (size_t j = 0; j < n; j++) {
            complete_column(out.u, j);
        }
        return out;
    }

    Matrix w = a;
    Matrix v = Matrix::identity(n);

    const double conv_tol = 1e-12;
    const size_t max_sweeps = 100;
    double rel_off = 0.0;
    size_t sweep = 0;
    for (sweep = 0; sweep < max_sweeps; sweep++) {
        double off2 = 0.0;
        for (size_t p = 0; p + 1 < n; p++) {
            for (size_t q = p + 1; q < n; q++) {
                const double apq = col_dot(w, p, q);
                off2 += 2.0 * apq * apq;
                if (apq == 0.0) {
                    continue;
                }
                const double app = col_dot(w, p, p);
                const double aqq = col_dot(w, q, q);
                if (std::abs(apq) <= 1e-18 * std::sqrt(app * aqq)) {
                    continue;
                }
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                rotate_cols(w, p, q, cs, sn);
                rotate_cols(v, p, q, cs, sn);
            }
        }
        rel_off = std::sqrt(off2) / (fro * fro);
        if (rel_off <= conv_tol) {
            sweep++;
            break;
        }
    }
    if (rel_off > conv_tol) {
        throw Error(errc::svd_no_convergence,
                    "jacobi sweep cap reached, relative off-diagonal residual " + std::to_string(rel_off));
    }
    out.sweeps = sweep;
    out.residual = rel_off;

    Vec norms(n, 0.0);
    for (size_t j = 0; j < n; j++) {
        norms[j] = std::sqrt(col_dot(w, j, j));
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return norms[i] > norms[j]; });

    for (size_t j = 0; j < n; j++) {
        const size_t src = order[j];
        out.s[j] = norms[src];
        for (size_t i = 0; i < n; i++) {
            out.v(i, j) = v(i, src);
        }
        for (size_t i = 0; i < m; i++) {
            out.u(i, j) = w(i, src);
        }
    }

    // Normalize u columns; re-orthonormalize so that columns carrying tiny
    // singular values (where rotation roundoff dominates the direction) still
    // satisfy u^T u = I. Two modified Gram-Schmidt passes are enough.
    const double dead = fro * 1e-13;
    for (size_t j = 0; j < n; j++) {
        for (int pass = 0; pass < 2; pass++) {
            for (size_t l = 0; l < j; l++) {
                double d = 0.0;
                for (size_t i = 0; i < m; i++) {
                    d += out.u(i, l) * out.u(i, j);
                }
                for (size_t i = 0; i < m; i++) {
                    out.u(i, j) -= d * out.u(i, l);
                }
            }
        }
        double nrm = 0.0;
        for (size_t i = 0; i < m; i++) {
            nrm += out.u(i, j) * out.u(i, j);
        }
        nrm = std::sqrt(nrm);
        if (out.s[j] <= dead || nrm <= dead) {
            complete_column(out.u, j);
        } else {
            for (size_t i = 0; i < m; i++) {
                out.u(i, j) /= nrm;
            }
        }
    }
    return out;
}

void apply_sign_convention(Matrix & u, Matrix & v) {
    for (size_t j = 0; j < v.cols(); j++) {
        size_t imax = 0;
        double best = -1.0;
        for (size_t i = 0; i < v.rows(); i++) {
            const double mag = std::abs(v(i, j));
            if (mag > best) {
                best = mag;
                imax = i;
            }
        }
        if (v(imax, j) < 0.0) {
            for (size_t i = 0; i < v.rows(); i++) {
                v(i, j) = -v(i, j);
            }
            for (size_t i = 0; i < u.rows(); i++) {
                u(i, j) = -u(i, j);
            }
        }
    }
}

} // namespace

SvdResult thin_svd(const Matrix & a) {
    if (a.rows() == 0 || a.cols() == 0) {
        throw Error(errc::bad_argument, "thin_svd: empty matrix");
    }
    for (double x : a.data()) {
        if (!std::isfinite(x)) {
            throw Error(errc::non_finite_value, "thin_svd: non-finite entry");
        }
    }
    SvdResult r;
    if (a.rows() >= a.cols()) {
        r = jacobi_svd_tall(a);
    } else {
        SvdResult t = jacobi_svd_tall(a.transposed());
        r.u = std::move(t.v);
        r.v = std::move(t.u);
        r.s = std::move(t.s);
        r.sweeps = t.sweeps;
        r.residual = t.residual;
    }
    apply_sign_convention(r.u, r.v);
    return r;
}

GramBasis gram_right_singular(const std::vector<Vec> & rows, size_t k) {
    if (rows.empty()) {
        throw Error(errc::bad_argument, "gram_right_singular: no rows");
    }
    const size_t n = rows.size();
    const size_t d = rows[0].size();
    for (const Vec & r : rows) {
        if (r.size() != d) {
            throw Error(errc::shape_mismatch, "gram_right_singular: ragged rows");
        }
    }
    if (k == 0) {
        throw Error(errc::bad_argument, "gram_right_singular: k must be >= 1");
    }

    Matrix g(n, n);
    for (size_t i = 0; i < n; i++) {
        for (size_t j = i; j < n; j++) {
            double s = 0.0;
            const double * ri = rows[i].data();
            const double * rj = rows[j].data();
            for (size_t t = 0; t < d; t++) {
                s += ri[t] * rj[t];
            }
            g(i, j) = s;
            g(j, i) = s;
        }
    }
    double trace = 0.0;
    for (size_t i = 0; i < n; i++) {
        trace += g(i, i);
    }

    SvdResult eg = thin_svd(g);
    size_t rank = 0;
    for (size_t j = 0; j < eg.s.size(); j++) {
        if (eg.s[j] >= 1e-12 * trace && eg.s[j] > 0.0) {
            rank++;
        } else {
            break;
        }
    }
    if (k > rank) {
        throw Error(errc::rank_deficient, "gram_right_singular: requested " + std::to_string(k) +
                                              " directions, numerical rank is " + std::to_string(rank));
    }

    GramBasis out;
    out.v = Matrix(d, k);
    out.s.assign(k, 0.0);
    for (size_t j = 0; j < k; j++) {
        const double sv = std::sqrt(eg.s[j]);
        out.s[j] = sv;
        Vec acc(d, 0.0);
        for (size_t i = 0; i < n; i++) {
            const double w = eg.v(i, j);
            if (w == 0.0) {
                continue;
            }
            const double * ri = rows[i].data();
            for (size_t t = 0; t < d; t++) {
                acc[t] += w * ri[t];
            }
        }
        double nrm = 0.0;
        for (double x : acc) {
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        for (size_t t = 0; t < d; t++) {
            out.v(t, j) = acc[t] / nrm;
        }
    }
    return out;
}

Matrix truncate_rank(const Matrix & a, size_t r) {
    const size_t q = std::min(a.rows(), a.cols());
    if (r < 1 || r > q) {
        throw Error(errc::bad_argument, "truncate_rank: r out of range");
    }
    SvdResult svd = thin_svd(a);
    Matrix b(a.rows(), a.cols());
    for (size_t j = 0; j < r; j++) {
        const double sv = svd.s[j];
        if (sv == 0.0) {
            break;
        }
        for (size_t i = 0; i < a.rows(); i++) {
            const double usv = svd.u(i, j) * sv;
            for (size_t c = 0; c < a.cols(); c++) {
                b(i, c) += usv * svd.v(c, j);
            }
        }
    }
    return b;
}

double tail_energy(const Matrix & a, size_t r) {
    const size_t q = std::min(a.rows(), a.cols());
    if (r > q) {
        throw Error(errc::bad_argument, "tail_energy: r out of range");
    }
    if (r == 0) {
        return a.fro_norm();
    }
    SvdResult svd = thin_svd(a);
    double s = 0.0;
    for (size_t j = r; j < q; j++) {
        s += svd.s[j] * svd.s[j];
    }
    return std::sqrt(s);
}

double sin_angle(const Vec & a, const Vec & b) {
    if (a.size() != b.size()) {
        throw Error(errc::shape_mismatch, "sin_angle: size mismatch");
    }
    double na2 = 0.0;
    double nb2 = 0.0;
    double ab = 0.0;
    for (size_t i = 0; i < a.size(); i++) {
        na2 += a[i] * a[i];
        nb2 += b[i] * b[i];
        ab += a[i] * b[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) {
        throw Error(errc::bad_argument, "sin_angle: zero vector");
    }
    const double t = ab / nb2;
    double r2 = 0.0;
    for (size_t i = 0; i < a.size(); i++) {
        const double ri = a[i] - t * b[i];
        r2 += ri * ri;
    }
    double s = std::sqrt(r2 / na2);
    return std::min(1.0, std::max(0.0, s));
}

Vec project(const Projector & p, const Vec & x) {
    if (p.basis.cols() == 0) {
        return Vec(x.size(), 0.0);
    }
    if (x.size() != p.basis.rows()) {
        throw Error(errc::shape_mismatch, "project: size mismatch");
    }
    Vec coef = p.basis.tmatvec(x);
    return p.basis.matvec(coef);
}

Vec reject(const Projector & p, const Vec & x) {
    Vec pr = project(p, x);
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); i++) {
        out[i] = x[i] - pr[i];
    }
    return out;
}

} // namespace realmerge::linalg
