#include "bnnshift/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bnnshift {

namespace {

constexpr std::size_t kMaxEighDim = 4096;
constexpr int kMaxJacobiSweeps = 100;

void check_symmetric(const Matrix& a, double tol) {
    if (a.rows() != a.cols())
        throw ShapeError("eigh_symmetric: matrix is not square (" +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ")");
    if (a.rows() > kMaxEighDim)
        throw ConfigError("eigh_symmetric: dimension exceeds cap of 4096");
    if (!a.all_finite()) throw NumericError("eigh_symmetric: non-finite entries");
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > tol)
                throw ShapeError("eigh_symmetric: matrix not symmetric within tol at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
}

double offdiag_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
}

}  // namespace

EighResult eigh_symmetric(const Matrix& a_in, double tol) {
    check_symmetric(a_in, tol);
    const std::size_t n = a_in.rows();
    Matrix a = a_in;
    // Symmetrize exactly so rounding asymmetry within tol cannot bias sweeps.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = a(j, i) = m;
        }
    Matrix v = Matrix::identity(n);

    const double frob = frobenius_norm(a);
    const double stop = std::max(frob, 1.0) * 1e-15;

    int sweep = 0;
    for (; sweep < kMaxJacobiSweeps; ++sweep) {
        if (offdiag_norm(a) <= stop) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= stop / (n * n + 1.0)) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                const double app = a(p, p), aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = a(p, k) = akp - s * (akq + tau * akp);
                    a(k, q) = a(q, k) = akq + s * (akp - tau * akq);
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = vkp - s * (vkq + tau * vkp);
                    v(k, q) = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }
    if (sweep == kMaxJacobiSweeps && offdiag_norm(a) > stop)
        throw NumericError("eigh_symmetric: Jacobi failed to converge in 100 sweeps");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EighResult r;
    r.eigenvalues.resize(n);
    r.eigenvectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        r.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) r.eigenvectors(i, j) = v(i, order[j]);
    }
    return r;
}

Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix is not square");
    if (!a.all_finite()) throw NumericError("cholesky: non-finite entries");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d <= 0.0 || !std::isfinite(d))
            throw NumericError("cholesky: matrix not positive definite, pivot " +
                               std::to_string(j) + " = " + std::to_string(d));
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Vector forward_solve(const Matrix& lower, const Vector& b) {
    const std::size_t n = lower.rows();
    if (b.size() != n) throw ShapeError("forward_solve: dimension mismatch");
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < i; ++j) s -= lower(i, j) * y[j];
        y[i] = s / lower(i, i);
    }
    return y;
}

Vector back_solve_transposed(const Matrix& lower, const Vector& y) {
    const std::size_t n = lower.rows();
    if (y.size() != n) throw ShapeError("back_solve_transposed: dimension mismatch");
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= lower(j, ii) * x[j];
        x[ii] = s / lower(ii, ii);
    }
    return x;
}

Vector cholesky_solve(const Matrix& lower, const Vector& b) {
    return back_solve_transposed(lower, forward_solve(lower, b));
}

Matrix cholesky_inverse(const Matrix& lower) {
    const std::size_t n = lower.rows();
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        Vector col = cholesky_solve(lower, e);
        e[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    // Enforce exact symmetry against rounding drift.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = inv(j, i) = m;
        }
    return inv;
}

}  // namespace bnnshift
