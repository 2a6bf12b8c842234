#include "bnnshift/prior.hpp"

#include <cmath>

#include "bnnshift/errors.hpp"
#include "bnnshift/linalg.hpp"
#include "bnnshift/sampling.hpp"

namespace bnnshift {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Coordinates covered by the covariance prior, if any: the W1 block plus b1
// when the prior includes the bias coordinate.
struct FirstLayerScope {
    bool active = false;
    std::size_t w_offset = 0, w_rows = 0, w_cols = 0;
    std::size_t b_offset = 0;
    bool with_bias = false;
};

FirstLayerScope first_layer_scope(const PriorSpec& prior, const ParamVector& params) {
    FirstLayerScope s;
    if (!prior.first_layer) return s;
    const auto& wb = params.block("W1");
    s.active = true;
    s.w_offset = wb.offset;
    if (wb.shape.size() == 2) {
        s.w_rows = wb.shape[0];
        s.w_cols = wb.shape[1];
    } else {
        s.w_rows = wb.shape[0];
        s.w_cols = 1;
    }
    s.with_bias = prior.first_layer->includes_bias;
    if (s.with_bias) {
        if (!params.has_block("b1"))
            throw ConfigError("prior: covariance prior includes bias but model has no b1");
        s.b_offset = params.block("b1").offset;
    }
    const std::size_t expect = s.w_rows + (s.with_bias ? 1 : 0);
    if (prior.first_layer->dim != expect)
        throw ShapeError("prior: covariance dimension " +
                         std::to_string(prior.first_layer->dim) +
                         " does not match first layer column size " +
                         std::to_string(expect));
    return s;
}

bool covered_by_first_layer(const FirstLayerScope& s, std::size_t i) {
    if (!s.active) return false;
    if (i >= s.w_offset && i < s.w_offset + s.w_rows * s.w_cols) return true;
    if (s.with_bias && i >= s.b_offset && i < s.b_offset + s.w_cols) return true;
    return false;
}

double base_logpdf_grad_iid(const BasePrior& b, double w, double& g) {
    switch (b.family) {
        case PriorFamily::Gaussian:
            g = -w / b.alpha2;
            return -0.5 * w * w / b.alpha2 - 0.5 * std::log(2.0 * M_PI * b.alpha2);
        case PriorFamily::Laplace:
            g = -sign0(w) / b.alpha;
            return -std::abs(w) / b.alpha - std::log(2.0 * b.alpha);
        case PriorFamily::StudentT: {
            const double q = b.nu * b.alpha2 + w * w;
            g = -(b.nu + 1.0) * w / q;
            return std::lgamma(0.5 * (b.nu + 1.0)) - std::lgamma(0.5 * b.nu) -
                   0.5 * std::log(b.nu * M_PI) -
                   0.5 * (b.nu + 1.0) * std::log1p(w * w / (b.nu * b.alpha2));
        }
        case PriorFamily::ExpNorm:
            throw ConfigError("exp_norm is a joint prior, not per-coordinate");
    }
    return 0.0;
}

}  // namespace

void BasePrior::validate() const {
    switch (family) {
        case PriorFamily::Gaussian:
            if (alpha2 <= 0.0) throw ConfigError("prior.gaussian: alpha2 must be positive");
            break;
        case PriorFamily::Laplace:
            if (alpha <= 0.0) throw ConfigError("prior.laplace: alpha must be positive");
            break;
        case PriorFamily::StudentT:
            if (nu <= 0.0) throw ConfigError("prior.student_t: nu must be positive");
            if (alpha2 <= 0.0) throw ConfigError("prior.student_t: alpha2 must be positive");
            break;
        case PriorFamily::ExpNorm:
            if (p <= 0.0) throw ConfigError("prior.exp_norm: p must be positive");
            if (alpha2 <= 0.0) throw ConfigError("prior.exp_norm: alpha2 must be positive");
            break;
    }
}

double BasePrior::reference_std() const {
    switch (family) {
        case PriorFamily::Gaussian: return std::sqrt(alpha2);
        case PriorFamily::Laplace: return std::sqrt(2.0) * alpha;
        case PriorFamily::StudentT:
            return nu > 2.0 ? std::sqrt(alpha2 * nu / (nu - 2.0)) : std::sqrt(alpha2);
        case PriorFamily::ExpNorm: return std::sqrt(alpha2);
    }
    return 1.0;
}

double CovariancePrior::variance_along(const Vector& dir) const {
    if (dir.size() != dim) throw ShapeError("variance_along: direction dimension mismatch");
    Vector cd = matvec(cov, dir);
    return dot(dir, cd);
}

Vector CovariancePrior::planted_direction(const Vector& c, double c0) const {
    Vector d;
    if (includes_bias) {
        if (c.size() + 1 != dim) throw ShapeError("planted_direction: dimension mismatch");
        d = c;
        double shift = c0;
        for (std::size_t i = 0; i < c.size(); ++i) shift -= c[i] * data_mean[i];
        d.push_back(-shift);
    } else {
        if (c.size() != dim) throw ShapeError("planted_direction: dimension mismatch");
        d = c;
    }
    const double nrm = norm2(d);
    if (nrm == 0.0) throw ConfigError("planted_direction: zero direction");
    for (double& x : d) x /= nrm;
    return d;
}

void PriorSpec::validate() const {
    base.validate();
    if (sum_filter && sum_filter->gamma2 <= 0.0)
        throw ConfigError("prior.sum_filter: gamma2 must be positive");
    if (first_layer && first_layer->epsilon <= 0.0)
        throw ConfigError("prior.covariance: epsilon must be positive");
}

double PriorSpec::reference_std() const {
    if (first_layer) {
        double mean_eig = 0.0;
        for (double e : first_layer->eigenvalues) mean_eig += e;
        mean_eig /= static_cast<double>(first_layer->eigenvalues.size());
        return std::sqrt(mean_eig);
    }
    return base.reference_std();
}

double prior_logpdf_grad(const PriorSpec& prior, const ParamVector& params,
                         Vector& grad) {
    prior.validate();
    if (grad.size() != params.dim()) grad.assign(params.dim(), 0.0);
    const FirstLayerScope scope = first_layer_scope(prior, params);
    double lp = 0.0;

    if (prior.base.family == PriorFamily::ExpNorm) {
        // Joint density over all base-covered coordinates.
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < params.dim(); ++i)
            if (!covered_by_first_layer(scope, i)) norm_sq += params.data[i] * params.data[i];
        const double r = std::sqrt(norm_sq);
        const double p = prior.base.p, a2 = prior.base.alpha2;
        lp += -std::pow(r, p) / (2.0 * a2);
        if (r > 0.0) {
            const double coef = -p * std::pow(r, p - 2.0) / (2.0 * a2);
            for (std::size_t i = 0; i < params.dim(); ++i)
                if (!covered_by_first_layer(scope, i)) grad[i] += coef * params.data[i];
        }
    } else {
        for (std::size_t i = 0; i < params.dim(); ++i) {
            if (covered_by_first_layer(scope, i)) continue;
            double g = 0.0;
            lp += base_logpdf_grad_iid(prior.base, params.data[i], g);
            grad[i] += g;
        }
    }

    if (scope.active) {
        const auto& cp = *prior.first_layer;
        const std::size_t d = cp.dim;
        Vector u(d), pu(d);
        for (std::size_t j = 0; j < scope.w_cols; ++j) {
            for (std::size_t i = 0; i < scope.w_rows; ++i)
                u[i] = params.data[scope.w_offset + i * scope.w_cols + j];
            if (scope.with_bias) u[d - 1] = params.data[scope.b_offset + j];
            pu = matvec(cp.precision, u);
            lp += -0.5 * dot(u, pu) - cp.log_det_half - 0.5 * d * kLog2Pi;
            for (std::size_t i = 0; i < scope.w_rows; ++i)
                grad[scope.w_offset + i * scope.w_cols + j] -= pu[i];
            if (scope.with_bias) grad[scope.b_offset + j] -= pu[d - 1];
        }
    }

    if (prior.sum_filter) {
        const auto& wb = params.block("W1");
        if (wb.shape.size() != 2)
            throw ConfigError("prior.sum_filter: first layer is not a conv filter bank");
        const std::size_t rows = wb.shape[0], cols = wb.shape[1];
        const double g2 = prior.sum_filter->gamma2;
        for (std::size_t f = 0; f < cols; ++f) {
            double s = 0.0;
            for (std::size_t i = 0; i < rows; ++i) s += params.data[wb.offset + i * cols + f];
            lp += -std::abs(s) / g2 - std::log(2.0 * g2);
            const double gs = -sign0(s) / g2;
            if (gs != 0.0)
                for (std::size_t i = 0; i < rows; ++i) grad[wb.offset + i * cols + f] += gs;
        }
    }

    return lp;
}

double prior_logpdf(const PriorSpec& prior, const ParamVector& params) {
    Vector scratch;
    return prior_logpdf_grad(prior, params, scratch);
}

double sample_base_marginal(const BasePrior& base, RngStream& rng) {
    switch (base.family) {
        case PriorFamily::Gaussian:
            return std::sqrt(base.alpha2) * rng.next_gaussian();
        case PriorFamily::Laplace:
            return base.alpha * sample_laplace_unit(rng);
        case PriorFamily::StudentT: {
            const double z = rng.next_gaussian();
            const double chi2 = 2.0 * sample_gamma(rng, 0.5 * base.nu);
            return std::sqrt(base.alpha2) * z * std::sqrt(base.nu / chi2);
        }
        case PriorFamily::ExpNorm:
            throw ConfigError("exp_norm has no scalar marginal sampler");
    }
    return 0.0;
}

ParamVector sample_prior(const PriorSpec& prior, const ParamVector& prototype,
                         RngStream& rng) {
    prior.validate();
    ParamVector out = prototype;
    const FirstLayerScope scope = first_layer_scope(prior, out);

    std::vector<std::size_t> base_coords;
    base_coords.reserve(out.dim());
    for (std::size_t i = 0; i < out.dim(); ++i)
        if (!covered_by_first_layer(scope, i)) base_coords.push_back(i);

    if (prior.base.family == PriorFamily::ExpNorm) {
        // Uniform direction, radius from the radial gamma transform:
        // r^{d-1} exp(-r^p / 2a^2) dr  <=>  r = (2 a^2 G)^{1/p}, G ~ Gamma(d/p).
        const std::size_t d = base_coords.size();
        Vector dir(d);
        double nrm = 0.0;
        for (double& x : dir) {
            x = rng.next_gaussian();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        const double g = sample_gamma(rng, static_cast<double>(d) / prior.base.p);
        const double r = std::pow(2.0 * prior.base.alpha2 * g, 1.0 / prior.base.p);
        for (std::size_t k = 0; k < d; ++k) out.data[base_coords[k]] = r * dir[k] / nrm;
    } else {
        for (std::size_t i : base_coords)
            out.data[i] = sample_base_marginal(prior.base, rng);
    }

    if (scope.active) {
        const auto& cp = *prior.first_layer;
        const std::size_t d = cp.dim;
        Vector zero(d, 0.0);
        for (std::size_t j = 0; j < scope.w_cols; ++j) {
            Vector u = sample_gaussian(rng, zero, cp.factor);
            for (std::size_t i = 0; i < scope.w_rows; ++i)
                out.data[scope.w_offset + i * scope.w_cols + j] = u[i];
            if (scope.with_bias) out.data[scope.b_offset + j] = u[d - 1];
        }
    }

    if (prior.sum_filter) {
        // Component-wise Metropolis targeting gaussian x laplace(filter sum).
        const auto& wb = out.block("W1");
        const std::size_t rows = wb.shape[0], cols = wb.shape[1];
        const double a2 = prior.base.alpha2, g2 = prior.sum_filter->gamma2;
        const double step = 0.5 * std::sqrt(a2);
        for (std::size_t f = 0; f < cols; ++f) {
            double s = 0.0;
            for (std::size_t i = 0; i < rows; ++i) s += out.data[wb.offset + i * cols + f];
            for (int sweep = 0; sweep < 1000; ++sweep) {
                for (std::size_t i = 0; i < rows; ++i) {
                    const std::size_t idx = wb.offset + i * cols + f;
                    const double w = out.data[idx];
                    const double wp = w + step * rng.next_gaussian();
                    const double sp = s - w + wp;
                    const double dlp = -0.5 * (wp * wp - w * w) / a2 -
                                       (std::abs(sp) - std::abs(s)) / g2;
                    if (dlp >= 0.0 || rng.next_unit() < std::exp(dlp)) {
                        out.data[idx] = wp;
                        s = sp;
                    }
                }
            }
        }
    }

    return out;
}

namespace {

CovariancePrior finish_covariance(CovariancePrior cp) {
    cp.factor = cholesky(cp.cov);
    cp.precision = cholesky_inverse(cp.factor);
    auto eig = eigh_symmetric(cp.cov, 1e-9);
    cp.eigenvalues = std::move(eig.eigenvalues);
    cp.eigenvectors = std::move(eig.eigenvectors);
    cp.log_det_half = 0.0;
    for (std::size_t i = 0; i < cp.dim; ++i) cp.log_det_half += std::log(cp.factor(i, i));
    return cp;
}

// Centered inputs and recorded shift; n >= 2 enforced.
std::pair<Matrix, Vector> center_inputs(const Matrix& inputs) {
    if (inputs.rows() < 2) throw ConfigError("covariance prior: need at least 2 rows");
    const std::size_t n = inputs.rows(), m = inputs.cols();
    Vector mean(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) mean[j] += inputs(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    Matrix xc(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) xc(i, j) = inputs(i, j) - mean[j];
    return {std::move(xc), std::move(mean)};
}

}  // namespace

CovariancePrior build_empcov(const Matrix& inputs, double alpha, double epsilon,
                             bool include_bias) {
    if (alpha <= 0.0 || epsilon <= 0.0)
        throw ConfigError("build_empcov: alpha and epsilon must be positive");
    auto [xc, mean] = center_inputs(inputs);
    const std::size_t n = xc.rows(), m = xc.cols();
    const std::size_t d = m + (include_bias ? 1 : 0);

    CovariancePrior cp;
    cp.dim = d;
    cp.includes_bias = include_bias;
    cp.alpha = alpha;
    cp.epsilon = epsilon;
    cp.data_mean = mean;
    cp.cov = Matrix(d, d);
    // Second moment of the (centered) rows, bias coordinate fixed at 1.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double va = a < m ? xc(i, a) : 1.0;
            if (va == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) {
                const double vb = b < m ? xc(i, b) : 1.0;
                cp.cov(a, b) += va * vb;
            }
        }
    }
    const double scale = alpha / static_cast<double>(n - 1);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cp.cov(a, b) *= scale;
            cp.cov(b, a) = cp.cov(a, b);
        }
    for (std::size_t a = 0; a < d; ++a) cp.cov(a, a) += epsilon;
    return finish_covariance(std::move(cp));
}

CovariancePrior build_pca_prior_with(
    const Matrix& inputs, double alpha, double epsilon,
    const std::function<double(std::size_t, double)>& f) {
    if (alpha <= 0.0 || epsilon <= 0.0)
        throw ConfigError("build_pca_prior: alpha and epsilon must be positive");
    auto [xc, mean] = center_inputs(inputs);
    const std::size_t n = xc.rows(), m = xc.cols();

    Matrix sigma(m, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < m; ++a) {
            const double va = xc(i, a);
            if (va == 0.0) continue;
            for (std::size_t b = a; b < m; ++b) sigma(a, b) += va * xc(i, b);
        }
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a; b < m; ++b) {
            sigma(a, b) /= static_cast<double>(n - 1);
            sigma(b, a) = sigma(a, b);
        }

    auto eig = eigh_symmetric(sigma, 1e-9);
    CovariancePrior cp;
    cp.dim = m;
    cp.includes_bias = false;
    cp.alpha = alpha;
    cp.epsilon = epsilon;
    cp.data_mean = mean;
    cp.cov = Matrix(m, m);
    for (std::size_t k = 0; k < m; ++k) {
        const double s = alpha * f(k, eig.eigenvalues[k]);
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b < m; ++b)
                cp.cov(a, b) += s * eig.eigenvectors(a, k) * eig.eigenvectors(b, k);
    }
    for (std::size_t a = 0; a < m; ++a) cp.cov(a, a) += epsilon;
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
            const double v = 0.5 * (cp.cov(a, b) + cp.cov(b, a));
            cp.cov(a, b) = cp.cov(b, a) = v;
        }
    return finish_covariance(std::move(cp));
}

CovariancePrior build_pca_prior(const Matrix& inputs, double alpha, double epsilon,
                                double lambda) {
    if (lambda <= 0.0 || lambda > 1.0)
        throw ConfigError("build_pca_prior: lambda must lie in (0, 1]");
    return build_pca_prior_with(inputs, alpha, epsilon,
                                [lambda](std::size_t i, double) {
                                    return std::pow(lambda, static_cast<double>(i + 1));
                                });
}

PriorSpec build_sumfilter(double alpha2, double gamma2, const ModelSpec& model) {
    if (alpha2 <= 0.0 || gamma2 <= 0.0)
        throw ConfigError("build_sumfilter: alpha2 and gamma2 must be positive");
    if (model.kind != ModelKind::Cnn)
        throw ConfigError("build_sumfilter: first layer must be convolutional");
    PriorSpec p;
    p.base.family = PriorFamily::Gaussian;
    p.base.alpha2 = alpha2;
    p.sum_filter = SumFilterPrior{gamma2};
    return p;
}

}  // namespace bnnshift
