// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "trap/rng.hpp"

namespace trap {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);
Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
Vec scaled(const Vec& a, double s);
void axpy(double s, const Vec& x, Vec& y);  // y += s*x
bool all_finite(const Vec& a);

/// Dense row-major matrix. Small sizes only (embedding-space algebra).
struct Matrix {
    int rows = 0;
    int cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

Vec matvec(const Matrix& m, const Vec& x);    // m * x
Vec matvec_t(const Matrix& m, const Vec& x);  // m^T * x
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix random_gaussian(int rows, int cols, Rng& rng, double scale = 1.0);

/// Matrix with orthonormal columns (rows >= cols), produced by modified
/// Gram-Schmidt on a seeded Gaussian draw. Satisfies m^T m == identity.
Matrix orthonormal_columns(int rows, int cols, std::uint64_t seed);

/// Solve (a a^T) x = b for symmetric positive definite a a^T via Cholesky.
/// Returns the right-inverse a^T (a a^T)^{-1} of a wide matrix a.
Matrix right_inverse(const Matrix& a);

}  // namespace trap
