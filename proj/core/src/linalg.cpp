// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/linalg.hpp"

#include <cmath>
#include <stdexcept>

#include "trap/error.hpp"

namespace trap {

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeMismatchError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec add(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeMismatchError("add: length mismatch");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

Vec sub(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeMismatchError("sub: length mismatch");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

Vec scaled(const Vec& a, double s) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * s;
    return r;
}

void axpy(double s, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw ShapeMismatchError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

Vec matvec(const Matrix& m, const Vec& x) {
    if (static_cast<int>(x.size()) != m.cols) throw ShapeMismatchError("matvec: dimension mismatch");
    Vec r(static_cast<std::size_t>(m.rows), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double* row = &m.a[static_cast<std::size_t>(i) * m.cols];
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) s += row[j] * x[j];
        r[i] = s;
    }
    return r;
}

Vec matvec_t(const Matrix& m, const Vec& x) {
    if (static_cast<int>(x.size()) != m.rows) throw ShapeMismatchError("matvec_t: dimension mismatch");
    Vec r(static_cast<std::size_t>(m.cols), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double* row = &m.a[static_cast<std::size_t>(i) * m.cols];
        const double xi = x[i];
        for (int j = 0; j < m.cols; ++j) r[j] += row[j] * xi;
    }
    return r;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeMismatchError("matmul: dimension mismatch");
    Matrix r(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.a[static_cast<std::size_t>(k) * b.cols];
            double* rrow = &r.a[static_cast<std::size_t>(i) * r.cols];
            for (int j = 0; j < b.cols; ++j) rrow[j] += aik * brow[j];
        }
    }
    return r;
}

Matrix transpose(const Matrix& m) {
    Matrix r(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) r(j, i) = m(i, j);
    return r;
}

Matrix random_gaussian(int rows, int cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (auto& v : m.a) v = rng.normal() * scale;
    return m;
}

Matrix orthonormal_columns(int rows, int cols, std::uint64_t seed) {
    if (rows < cols) throw ShapeMismatchError("orthonormal_columns: rows < cols");
    Rng rng(seed);
    // Column-major scratch for cache-friendly Gram-Schmidt.
    std::vector<Vec> col(static_cast<std::size_t>(cols), Vec(static_cast<std::size_t>(rows)));
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) col[j][i] = rng.normal();
    for (int j = 0; j < cols; ++j) {
        for (int k = 0; k < j; ++k) {
            const double p = dot(col[j], col[k]);
            axpy(-p, col[k], col[j]);
        }
        double n = norm(col[j]);
        if (n < 1e-12) {
            // Degenerate draw; replace with a canonical basis vector.
            std::fill(col[j].begin(), col[j].end(), 0.0);
            col[j][j % rows] = 1.0;
            for (int k = 0; k < j; ++k) axpy(-dot(col[j], col[k]), col[k], col[j]);
            n = norm(col[j]);
        }
        for (auto& v : col[j]) v /= n;
    }
    Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = col[j][i];
    return m;
}

namespace {

// Cholesky factorization of a symmetric positive definite matrix (in place,
// lower triangle).
Matrix cholesky(const Matrix& s) {
    if (s.rows != s.cols) throw ShapeMismatchError("cholesky: not square");
    const int n = s.rows;
    Matrix l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = s(i, j);
            for (int k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
            if (i == j) {
                if (sum <= 0.0) throw Error("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(sum);
            } else {
                l(i, j) = sum / l(j, j);
            }
        }
    }
    return l;
}

Vec cholesky_solve(const Matrix& l, Vec b) {
    const int n = l.rows;
    for (int i = 0; i < n; ++i) {  // forward
        for (int k = 0; k < i; ++k) b[i] -= l(i, k) * b[k];
        b[i] /= l(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {  // backward with l^T
        for (int k = i + 1; k < n; ++k) b[i] -= l(k, i) * b[k];
        b[i] /= l(i, i);
    }
    return b;
}

}  // namespace

Matrix right_inverse(const Matrix& a) {
    // gram = a a^T (rows x rows), result = a^T gram^{-1} (cols x rows).
    const int r = a.rows;
    Matrix gram(r, r);
    for (int i = 0; i < r; ++i) {
        for (int j = i; j < r; ++j) {
            double s = 0.0;
            const double* ri = &a.a[static_cast<std::size_t>(i) * a.cols];
            const double* rj = &a.a[static_cast<std::size_t>(j) * a.cols];
            for (int k = 0; k < a.cols; ++k) s += ri[k] * rj[k];
            gram(i, j) = s;
            gram(j, i) = s;
        }
    }
    const Matrix l = cholesky(gram);
    Matrix inv_cols(r, r);  // column j = gram^{-1} e_j
    for (int j = 0; j < r; ++j) {
        Vec e(static_cast<std::size_t>(r), 0.0);
        e[j] = 1.0;
        Vec x = cholesky_solve(l, std::move(e));
        for (int i = 0; i < r; ++i) inv_cols(i, j) = x[i];
    }
    Matrix result(a.cols, r);
    for (int i = 0; i < a.cols; ++i)
        for (int j = 0; j < r; ++j) {
            double s = 0.0;
            for (int k = 0; k < r; ++k) s += a(k, i) * inv_cols(k, j);
            result(i, j) = s;
        }
    return result;
}

}  // namespace trap
