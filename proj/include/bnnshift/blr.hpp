#pragma once

#include <utility>

#include "bnnshift/matrix.hpp"

namespace bnnshift {

// Conjugate Bayesian linear regression posterior:
//   Sigma^{-1} = Sigma0^{-1} + Phi^T Phi / sigma^2
//   mu = Sigma (Sigma0^{-1} mu0 + Phi^T y / sigma^2)
// The MAP solution equals mu.
struct BlrPosterior {
    Vector mean;
    Matrix covariance;
    double sigma2 = 1.0;
    Vector prior_mean;
    Matrix prior_cov;
};

BlrPosterior blr_posterior(const Matrix& phi, const Vector& y, const Vector& prior_mean,
                           const Matrix& prior_cov, double sigma2);

// Predictive mean and variance at a feature vector: (mu.x, x^T Sigma x + sigma^2).
std::pair<double, double> blr_predict(const BlrPosterior& post, const Vector& x);

}  // namespace bnnshift
