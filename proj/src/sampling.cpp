#include "bnnshift/sampling.hpp"

#include <cmath>

#include "bnnshift/errors.hpp"

namespace bnnshift {

Vector sample_gaussian(RngStream& rng, const Vector& mean, const Matrix& cov_factor) {
    if (cov_factor.rows() != mean.size() || cov_factor.cols() != mean.size())
        throw ShapeError("sample_gaussian: factor shape does not match mean dimension");
    const std::size_t n = mean.size();
    Vector z = rng.gaussian_vector(n);
    Vector x = mean;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) s += cov_factor(i, j) * z[j];
        // Upper triangle of a general factor still contributes.
        for (std::size_t j = i + 1; j < n; ++j) s += cov_factor(i, j) * z[j];
        x[i] += s;
    }
    return x;
}

double sample_gamma(RngStream& rng, double shape) {
    if (shape <= 0.0) throw ConfigError("sample_gamma: shape must be positive");
    if (shape < 1.0) {
        const double u = rng.next_unit();
        return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.next_gaussian();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.next_unit();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double sample_laplace_unit(RngStream& rng) {
    const double u = rng.next_unit() - 0.5;
    const double mag = -std::log(1.0 - 2.0 * std::abs(u));
    return u >= 0.0 ? mag : -mag;
}

}  // namespace bnnshift
