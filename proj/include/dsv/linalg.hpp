#pragma once

#include <cstddef>
#include <vector>

namespace dsv {

// Dense symmetric solvers sized for normal-equation systems (a few hundred
// unknowns at most).

// In-place Cholesky factorization A = L L^T of a symmetric matrix stored
// row-major. Returns false if A is not positive definite.
bool cholesky_factor(std::vector<double>& a, std::size_t n);

// Solves L L^T x = b given the factor from cholesky_factor.
void cholesky_solve(const std::vector<double>& l, std::size_t n, std::vector<double>& b);

// Cyclic Jacobi eigendecomposition of a symmetric matrix: A = V diag(d) V^T.
// V is returned row-major with eigenvectors in columns.
void jacobi_eigh(std::vector<double> a, std::size_t n, std::vector<double>& eigvecs,
                 std::vector<double>& eigvals);

// Minimum-norm solution of a symmetric (possibly singular) system via the
// eigendecomposition, with relative eigenvalue cutoff.
std::vector<double> pseudo_inverse_solve(const std::vector<double>& a, std::size_t n,
                                         const std::vector<double>& b, double rcond = 1e-12);

} // namespace dsv
