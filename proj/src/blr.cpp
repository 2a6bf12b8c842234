#include "bnnshift/blr.hpp"

#include "bnnshift/errors.hpp"
#include "bnnshift/linalg.hpp"

namespace bnnshift {

BlrPosterior blr_posterior(const Matrix& phi, const Vector& y, const Vector& prior_mean,
                           const Matrix& prior_cov, double sigma2) {
    if (sigma2 <= 0.0) throw ConfigError("blr_posterior: sigma2 must be positive");
    const std::size_t d = prior_mean.size();
    if (prior_cov.rows() != d || prior_cov.cols() != d)
        throw ShapeError("blr_posterior: prior covariance shape mismatch");
    if (phi.rows() != y.size()) throw ShapeError("blr_posterior: row count mismatch");
    if (phi.rows() > 0 && phi.cols() != d)
        throw ShapeError("blr_posterior: design matrix column mismatch");

    Matrix prior_chol = cholesky(prior_cov);  // NumericError when singular
    Matrix prior_precision = cholesky_inverse(prior_chol);

    Matrix a = prior_precision;
    for (std::size_t i = 0; i < phi.rows(); ++i)
        for (std::size_t p = 0; p < d; ++p) {
            const double v = phi(i, p) / sigma2;
            if (v == 0.0) continue;
            for (std::size_t q = 0; q < d; ++q) a(p, q) += v * phi(i, q);
        }

    Vector rhs = matvec(prior_precision, prior_mean);
    for (std::size_t i = 0; i < phi.rows(); ++i) {
        const double yi = y[i] / sigma2;
        for (std::size_t p = 0; p < d; ++p) rhs[p] += phi(i, p) * yi;
    }

    Matrix a_chol = cholesky(a);
    BlrPosterior post;
    post.mean = cholesky_solve(a_chol, rhs);
    post.covariance = cholesky_inverse(a_chol);
    post.sigma2 = sigma2;
    post.prior_mean = prior_mean;
    post.prior_cov = prior_cov;
    return post;
}

std::pair<double, double> blr_predict(const BlrPosterior& post, const Vector& x) {
    if (x.size() != post.mean.size()) throw ShapeError("blr_predict: dimension mismatch");
    const double mean = dot(post.mean, x);
    const double var = dot(x, matvec(post.covariance, x)) + post.sigma2;
    return {mean, var};
}

}  // namespace bnnshift
