#pragma once

#include "bnnshift/matrix.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

// Draw mean + cov_factor * z with z iid standard normal.
Vector sample_gaussian(RngStream& rng, const Vector& mean, const Matrix& cov_factor);

// Gamma(shape, 1) via Marsaglia-Tsang squeeze-rejection; shape < 1 handled
// by the boost Gamma(shape+1) * U^{1/shape}.
double sample_gamma(RngStream& rng, double shape);

// Standard Laplace (unit scale) by inverting the CDF.
double sample_laplace_unit(RngStream& rng);

}  // namespace bnnshift
