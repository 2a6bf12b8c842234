#pragma once

#include <cstddef>
#include <utility>

#include "bnnshift/matrix.hpp"

namespace bnnshift {

struct EighResult {
    Vector eigenvalues;   // sorted descending
    Matrix eigenvectors;  // columns, orthonormal, matching order
};

// Symmetric eigendecomposition via cyclic Jacobi sweeps. O(d^3) per sweep;
// dimension capped at 4096. Input must be square and symmetric within tol.
EighResult eigh_symmetric(const Matrix& a, double tol = 1e-10);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NumericError naming the failing pivot index when not PD.
Matrix cholesky(const Matrix& a);

// Solve L y = b with L lower-triangular.
Vector forward_solve(const Matrix& lower, const Vector& b);

// Solve L^T x = y with L lower-triangular.
Vector back_solve_transposed(const Matrix& lower, const Vector& y);

// (L L^T)^{-1} b given the Cholesky factor L.
Vector cholesky_solve(const Matrix& lower, const Vector& b);

// Symmetric inverse from a Cholesky factor.
Matrix cholesky_inverse(const Matrix& lower);

}  // namespace bnnshift
