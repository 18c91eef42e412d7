// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "paretonet/common.hpp"

namespace paretonet {

// Small dense kernels used by the network code and the surrogates. Row-major
// throughout. All loops run in a fixed order so results are reproducible.

/// C[M][N] += A[M][K] * B[K][N]. A is addressed as A[m*rsa + k*csa] so the
/// same kernel serves the transposed case (rsa=1, csa=lda).
inline void gemm_acc(int M, int N, int K, const double* A, std::ptrdiff_t rsa,
                     std::ptrdiff_t csa, const double* B, std::ptrdiff_t ldb,
                     double* C, std::ptrdiff_t ldc) {
    constexpr int NB = 512;
    for (int n0 = 0; n0 < N; n0 += NB) {
        const int nb = std::min(NB, N - n0);
        int m = 0;
        for (; m + 4 <= M; m += 4) {
            double* c0 = C + m * ldc + n0;
            double* c1 = c0 + ldc;
            double* c2 = c1 + ldc;
            double* c3 = c2 + ldc;
            for (int k = 0; k < K; ++k) {
                const double a0 = A[(m + 0) * rsa + k * csa];
                const double a1 = A[(m + 1) * rsa + k * csa];
                const double a2 = A[(m + 2) * rsa + k * csa];
                const double a3 = A[(m + 3) * rsa + k * csa];
                const double* b = B + k * ldb + n0;
                for (int j = 0; j < nb; ++j) {
                    const double x = b[j];
                    c0[j] += a0 * x;
                    c1[j] += a1 * x;
                    c2[j] += a2 * x;
                    c3[j] += a3 * x;
                }
            }
        }
        for (; m < M; ++m) {
            double* c = C + m * ldc + n0;
            for (int k = 0; k < K; ++k) {
                const double a = A[m * rsa + k * csa];
                const double* b = B + k * ldb + n0;
                for (int j = 0; j < nb; ++j) c[j] += a * b[j];
            }
        }
    }
}

/// C[M][N] += A[M][K] * B[N][K]^T  (rows of both operands are contiguous).
inline void gemm_nt_acc(int M, int N, int K, const double* A, std::ptrdiff_t lda,
                        const double* B, std::ptrdiff_t ldb, double* C,
                        std::ptrdiff_t ldc) {
    int m = 0;
    for (; m + 2 <= M; m += 2) {
        const double* a0 = A + m * lda;
        const double* a1 = a0 + lda;
        int n = 0;
        for (; n + 2 <= N; n += 2) {
            const double* b0 = B + n * ldb;
            const double* b1 = b0 + ldb;
            double s00 = 0, s01 = 0, s10 = 0, s11 = 0;
            for (int k = 0; k < K; ++k) {
                const double x0 = a0[k], x1 = a1[k];
                const double y0 = b0[k], y1 = b1[k];
                s00 += x0 * y0;
                s01 += x0 * y1;
                s10 += x1 * y0;
                s11 += x1 * y1;
            }
            C[m * ldc + n] += s00;
            C[m * ldc + n + 1] += s01;
            C[(m + 1) * ldc + n] += s10;
            C[(m + 1) * ldc + n + 1] += s11;
        }
        for (; n < N; ++n) {
            const double* b0 = B + n * ldb;
            double s0 = 0, s1 = 0;
            for (int k = 0; k < K; ++k) {
                s0 += a0[k] * b0[k];
                s1 += a1[k] * b0[k];
            }
            C[m * ldc + n] += s0;
            C[(m + 1) * ldc + n] += s1;
        }
    }
    for (; m < M; ++m) {
        const double* a0 = A + m * lda;
        for (int n = 0; n < N; ++n) {
            const double* b0 = B + n * ldb;
            double s = 0;
            for (int k = 0; k < K; ++k) s += a0[k] * b0[k];
            C[m * ldc + n] += s;
        }
    }
}

/// In-place lower-triangular Cholesky of a symmetric matrix stored row-major.
/// Returns false if a pivot is not strictly positive.
inline bool cholesky_inplace(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        double* ri = a.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j <= i; ++j) {
            const double* rj = a.data() + static_cast<std::size_t>(j) * n;
            double s = ri[j];
            for (int k = 0; k < j; ++k) s -= ri[k] * rj[k];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                ri[j] = std::sqrt(s);
            } else {
                ri[j] = s / rj[j];
            }
        }
        for (int j = i + 1; j < n; ++j) ri[j] = 0.0;
    }
    return true;
}

/// Solves L L^T x = b given the Cholesky factor L (lower, row-major).
inline std::vector<double> cholesky_solve(const std::vector<double>& L, int n,
                                          const std::vector<double>& b) {
    std::vector<double> x(b);
    for (int i = 0; i < n; ++i) {
        const double* ri = L.data() + static_cast<std::size_t>(i) * n;
        double s = x[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k) s -= ri[k] * x[static_cast<std::size_t>(k)];
        x[static_cast<std::size_t>(i)] = s / ri[i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = x[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < n; ++k)
            s -= L[static_cast<std::size_t>(k) * n + i] * x[static_cast<std::size_t>(k)];
        x[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * n + i];
    }
    return x;
}

}  // namespace paretonet
