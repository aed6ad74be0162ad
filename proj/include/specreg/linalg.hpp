#pragma once

#include <cstdint>
#include <vector>

#include "specreg/tensor.hpp"

namespace specreg {

/// Result of a symmetric eigendecomposition. Row-major n x n eigenvector
/// matrix; column k pairs with eigenvalues[k]. Eigenvalues sorted descending,
/// each eigenvector's first nonzero component made positive.
struct EigenDecomposition {
    int64_t n = 0;
    std::vector<double> eigenvalues;
    std::vector<double> eigenvectors;

    double vec(int64_t i, int64_t k) const { return eigenvectors[static_cast<size_t>(i * n + k)]; }
};

/// Cyclic Jacobi eigensolver for symmetric matrices. Sweep budget 100,
/// converged when the off-diagonal Frobenius norm drops below 1e-12 * ||A||_F.
/// Rejects non-symmetric (tolerance 1e-9 absolute) or non-finite input.
EigenDecomposition sym_eig(const double* a, int64_t n);
EigenDecomposition sym_eig(const std::vector<double>& a, int64_t n);
EigenDecomposition sym_eig(const Tensor& a);

/// Lower Cholesky factor L with A = L L^T. Errors on a non-positive pivot,
/// reporting its index and value.
std::vector<double> cholesky_factor(const double* a, int64_t n);
std::vector<double> cholesky_factor(const std::vector<double>& a, int64_t n);

// Y = L^{-1} B for lower-triangular L; B is n x m row-major.
std::vector<double> solve_lower(const std::vector<double>& l, int64_t n,
                                const std::vector<double>& b, int64_t m);
// Y = L^{-T} B (back substitution against the transpose of L).
std::vector<double> solve_lower_transposed(const std::vector<double>& l, int64_t n,
                                           const std::vector<double>& b, int64_t m);

/// Reverse rule for the Cholesky factorization: given L and dLoss/dL, returns
/// the symmetric dLoss/dA for A = L L^T.
std::vector<double> cholesky_backward(const std::vector<double>& l, int64_t n,
                                      const std::vector<double>& lbar);

// plain row-major matrix product helpers (deterministic accumulation order)
void matmul_raw(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n, bool trans_a, bool trans_b);

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace specreg
