#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bnnshift/model.hpp"
#include "bnnshift/prior.hpp"
#include "bnnshift/rng.hpp"

using namespace bnnshift;

namespace {

ParamVector flat_params(std::size_t d) {
    ParamVector p;
    p.add_block("W2", {d});  // plain block, not first-layer scoped
    return p;
}

Vector fd_prior_grad(const PriorSpec& prior, const ParamVector& params, double h = 1e-6) {
    Vector g(params.dim());
    ParamVector p = params;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double w0 = p.data[i];
        p.data[i] = w0 + h;
        const double up = prior_logpdf(prior, p);
        p.data[i] = w0 - h;
        const double um = prior_logpdf(prior, p);
        p.data[i] = w0;
        g[i] = (up - um) / (2.0 * h);
    }
    return g;
}

double max_rel_err(const Vector& a, const Vector& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

Matrix planted_plane_data(std::size_t n, std::size_t m, const Vector& c, double c0,
                          RngStream& rng) {
    // Project gaussian rows onto {x : c.x = c0}; assumes |c| = 1.
    Matrix x(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        Vector row(m);
        for (double& v : row) v = rng.next_gaussian();
        double proj = -c0;
        for (std::size_t j = 0; j < m; ++j) proj += c[j] * row[j];
        for (std::size_t j = 0; j < m; ++j) x(i, j) = row[j] - proj * c[j];
    }
    return x;
}

}  // namespace

TEST_CASE("gaussian logpdf at zero includes the full normalizer") {
    const std::size_t d = 5;
    ParamVector p = flat_params(d);
    PriorSpec prior;
    prior.base.alpha2 = 1.0;
    CHECK(prior_logpdf(prior, p) ==
          doctest::Approx(-0.5 * d * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("laplace logpdf drops by |w|_1 / alpha") {
    ParamVector p = flat_params(4);
    PriorSpec prior;
    prior.base.family = PriorFamily::Laplace;
    prior.base.alpha = std::sqrt(1.0 / 6.0);
    const double at_zero = prior_logpdf(prior, p);
    p.data = {0.5, -0.25, 0.125, 0.125};  // |w|_1 = 1
    CHECK(prior_logpdf(prior, p) - at_zero == doctest::Approx(-std::sqrt(6.0)).epsilon(1e-12));
}

TEST_CASE("exp_norm gradient matches finite differences away from zero") {
    RngStream rng(1, 0);
    for (double pexp : {1.5, 2.0, 3.0}) {
        PriorSpec prior;
        prior.base.family = PriorFamily::ExpNorm;
        prior.base.p = pexp;
        prior.base.alpha2 = 0.7;
        ParamVector p = flat_params(6);
        for (double& w : p.data) w = 0.5 + rng.next_unit();  // away from the origin kink
        Vector g(p.dim(), 0.0);
        prior_logpdf_grad(prior, p, g);
        CHECK(max_rel_err(g, fd_prior_grad(prior, p)) < 1e-5);
    }
}

TEST_CASE("all families: gradient matches finite differences at 50 random points") {
    RngStream rng(2, 0);
    std::vector<PriorSpec> families(4);
    families[0].base = {PriorFamily::Gaussian, 0.3, 1.0, 5.0, 2.0};
    families[1].base = {PriorFamily::Laplace, 1.0, 0.8, 5.0, 2.0};
    families[2].base = {PriorFamily::StudentT, 0.5, 1.0, 4.0, 2.0};
    families[3].base = {PriorFamily::ExpNorm, 0.6, 1.0, 5.0, 2.5};
    for (const auto& prior : families) {
        for (int rep = 0; rep < 50; ++rep) {
            ParamVector p = flat_params(5);
            for (double& w : p.data) {
                // keep away from non-smooth loci (|w| kinks at 0)
                do {
                    w = rng.next_gaussian();
                } while (std::abs(w) < 0.05);
            }
            Vector g(p.dim(), 0.0);
            prior_logpdf_grad(prior, p, g);
            CHECK(max_rel_err(g, fd_prior_grad(prior, p)) < 1e-5);
        }
    }
}

TEST_CASE("student_t requires positive nu") {
    PriorSpec prior;
    prior.base.family = PriorFamily::StudentT;
    prior.base.nu = -1.0;
    ParamVector p = flat_params(2);
    CHECK_THROWS_AS(prior_logpdf(prior, p), ConfigError);
}

TEST_CASE("sampling: gaussian variance lands in the chi-square interval") {
    PriorSpec prior;
    prior.base.alpha2 = 0.01;
    ParamVector proto = flat_params(1);
    RngStream rng(42, 1);
    const int n = 100000;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        ParamVector draw = sample_prior(prior, proto, rng);
        s2 += draw.data[0] * draw.data[0];
    }
    const double var = s2 / n;
    CHECK(var > 0.0097);
    CHECK(var < 0.0103);
}

TEST_CASE("sampling: student_t excess kurtosis matches the moment formula") {
    // Moment oracle: excess kurtosis of Student-t is 6/(nu-4) for nu > 4.
    // The formula diverges at nu = 4 and the sample estimator only
    // concentrates for nu > 8 (it needs a finite 8th moment), so the check
    // runs at nu = 12 where the oracle gives 0.75.
    PriorSpec prior;
    prior.base.family = PriorFamily::StudentT;
    prior.base.nu = 12.0;
    prior.base.alpha2 = 1.0;
    ParamVector proto = flat_params(1);
    RngStream rng(7, 2);
    const int n = 1000000;
    double m2 = 0.0, m4 = 0.0;
    for (int i = 0; i < n; ++i) {
        ParamVector d = sample_prior(prior, proto, rng);
        const double w = d.data[0];
        m2 += w * w;
        m4 += w * w * w * w;
    }
    m2 /= n;
    m4 /= n;
    const double excess = m4 / (m2 * m2) - 3.0;
    CHECK(excess == doctest::Approx(6.0 / (12.0 - 4.0)).epsilon(0.2));

    // Heavier tails at smaller nu, directionally.
    prior.base.nu = 5.0;
    RngStream rng2(7, 3);
    double h2 = 0.0, h4 = 0.0;
    for (int i = 0; i < n; ++i) {
        ParamVector d = sample_prior(prior, proto, rng2);
        h2 += d.data[0] * d.data[0];
        h4 += std::pow(d.data[0], 4.0);
    }
    CHECK((h4 / n) / ((h2 / n) * (h2 / n)) - 3.0 > excess);
}

TEST_CASE("empcov: planted plane direction carries variance epsilon") {
    RngStream rng(3, 0);
    const std::size_t m = 5;
    Vector c(m, 0.0);
    c[0] = 0.6;
    c[2] = 0.8;  // unit norm
    Matrix x = planted_plane_data(60, m, c, 0.0, rng);
    const double alpha = 2.0, eps = 1e-3;
    CovariancePrior cp = build_empcov(x, alpha, eps, true);
    Vector dir = cp.planted_direction(c, 0.0);
    CHECK(cp.variance_along(dir) == doctest::Approx(eps).epsilon(1e-10));

    // Smallest eigenvalue >= eps - 1e-10
    CHECK(cp.eigenvalues.back() >= eps - 1e-10);
}

TEST_CASE("empcov: affine dependence direction includes the bias coordinate") {
    RngStream rng(4, 0);
    const std::size_t m = 4;
    Vector c(m, 0.5);  // unit norm
    const double c0 = 0.3;
    Matrix x = planted_plane_data(80, m, c, c0, rng);
    CovariancePrior cp = build_empcov(x, 1.5, 1e-4, true);
    Vector dir = cp.planted_direction(c, c0);
    CHECK(cp.variance_along(dir) == doctest::Approx(1e-4).epsilon(1e-8));
}

TEST_CASE("empcov: isotropic data gives (alpha + eps) I approximately") {
    RngStream rng(5, 0);
    const std::size_t n = 4000, m = 3;
    Matrix x(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) x(i, j) = rng.next_gaussian();
    CovariancePrior cp = build_empcov(x, 1.0, 0.01, false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double expect = i == j ? 1.01 : 0.0;
            CHECK(cp.cov(i, j) == doctest::Approx(expect).epsilon(0.1).scale(1.0));
        }
}

TEST_CASE("empcov: rank-deficient null direction sampling variance near epsilon") {
    RngStream rng(6, 0);
    const std::size_t m = 4;
    Vector c(m, 0.0);
    c[1] = 1.0;
    Matrix x = planted_plane_data(50, m, c, 0.0, rng);  // feature 1 constant 0
    const double eps = 1e-3;
    CovariancePrior cp = build_empcov(x, 1.0, eps, true);

    // Draw first-layer samples through the composite prior and project.
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.widths = {m, 3, 2};
    ParamVector proto = spec.make_params();
    PriorSpec prior;
    prior.base.alpha2 = 0.01;
    prior.first_layer = std::make_shared<CovariancePrior>(cp);

    Vector dir = cp.planted_direction(c, 0.0);
    RngStream srng(6, 1);
    double s2 = 0.0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        ParamVector d = sample_prior(prior, proto, srng);
        FirstLayerView v(spec, d);
        for (std::size_t j = 0; j < v.cols(); ++j) {
            double proj = 0.0;
            for (std::size_t i = 0; i < v.rows(); ++i) proj += dir[i] * v(i, j);
            s2 += proj * proj;
        }
    }
    const double var = s2 / (draws * 3.0);
    CHECK(var > 0.8 * eps);
    CHECK(var < 1.2 * eps);
}

TEST_CASE("empcov: conv patch set from a constant image") {
    // Constant image: every patch identical, so every centered direction has
    // zero variance and the prior assigns epsilon everywhere.
    const std::size_t K = 2;
    Matrix patches(9, K * K);
    for (std::size_t i = 0; i < patches.rows(); ++i)
        for (std::size_t j = 0; j < K * K; ++j) patches(i, j) = 0.7;
    CovariancePrior cp = build_empcov(patches, 1.0, 1e-3, false);
    for (double e : cp.eigenvalues) CHECK(e == doctest::Approx(1e-3).epsilon(1e-9));
}

TEST_CASE("pca prior: lambda = 1 is isotropic alpha + eps") {
    RngStream rng(7, 0);
    Matrix x(50, 3);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.next_gaussian();
    CovariancePrior cp = build_pca_prior(x, 0.5, 0.01, 1.0);
    for (double e : cp.eigenvalues) CHECK(e == doctest::Approx(0.51).epsilon(1e-9));
}

TEST_CASE("pca prior: decay 0.5 gives alpha * (0.5, 0.25, 0.125) + eps") {
    RngStream rng(8, 0);
    Matrix x(60, 3);
    for (std::size_t i = 0; i < 60; ++i) {
        x(i, 0) = 3.0 * rng.next_gaussian();
        x(i, 1) = 1.0 * rng.next_gaussian();
        x(i, 2) = 0.2 * rng.next_gaussian();
    }
    const double alpha = 2.0, eps = 1e-4;
    CovariancePrior cp = build_pca_prior(x, alpha, eps, 0.5);
    CHECK(cp.eigenvalues[0] == doctest::Approx(alpha * 0.5 + eps).epsilon(1e-9));
    CHECK(cp.eigenvalues[1] == doctest::Approx(alpha * 0.25 + eps).epsilon(1e-9));
    CHECK(cp.eigenvalues[2] == doctest::Approx(alpha * 0.125 + eps).epsilon(1e-9));
    CHECK(!cp.includes_bias);
}

TEST_CASE("pca prior with f(i) = eigenvalue_i recovers empcov") {
    RngStream rng(9, 0);
    Matrix x(40, 4);
    for (std::size_t i = 0; i < 40; ++i)
        for (std::size_t j = 0; j < 4; ++j) x(i, j) = (j + 1) * rng.next_gaussian();
    CovariancePrior as_pca = build_pca_prior_with(
        x, 1.3, 1e-4, [](std::size_t, double eig) { return eig; });
    CovariancePrior as_empcov = build_empcov(x, 1.3, 1e-4, false);
    CHECK(frobenius_norm(as_pca.cov - as_empcov.cov) < 1e-10);
}

TEST_CASE("pca prior: lambda outside (0,1] rejected") {
    Matrix x(3, 2);
    x(0, 0) = 1.0;
    x(1, 1) = 1.0;
    CHECK_THROWS_AS(build_pca_prior(x, 1.0, 1e-4, 0.0), ConfigError);
    CHECK_THROWS_AS(build_pca_prior(x, 1.0, 1e-4, 1.5), ConfigError);
}

TEST_CASE("empcov requires two rows") {
    Matrix x(1, 3);
    CHECK_THROWS_AS(build_empcov(x, 1.0, 1e-4, true), ConfigError);
}

TEST_CASE("sum_filter: zero-sum filter contributes zero gradient") {
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.image_h = spec.image_w = 6;
    spec.conv = {3, 2, false, true};
    spec.widths = {2};
    PriorSpec prior = build_sumfilter(0.25, 0.5, spec);
    ParamVector p = spec.make_params();
    auto w1 = p.block_span("W1");
    // filter 0: antisymmetric values, sum exactly 0; filter 1: positive sum
    for (std::size_t i = 0; i < 9; ++i) {
        w1[i * 2 + 0] = (i < 4) ? 1.0 : (i == 4 ? 0.0 : -1.0);
        w1[i * 2 + 1] = 0.3;
    }
    Vector g(p.dim(), 0.0);
    prior_logpdf_grad(prior, p, g);
    const auto& wb = p.block("W1");
    // gaussian part cancels against sum-filter only if we isolate it: compare
    // against a pure gaussian prior gradient.
    PriorSpec gauss;
    gauss.base.alpha2 = 0.25;
    Vector gg(p.dim(), 0.0);
    prior_logpdf_grad(gauss, p, gg);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(g[wb.offset + i * 2 + 0] == gg[wb.offset + i * 2 + 0]);  // sign(0) = 0
        CHECK(g[wb.offset + i * 2 + 1] ==
              doctest::Approx(gg[wb.offset + i * 2 + 1] - 1.0 / 0.5).epsilon(1e-12));
    }
}

TEST_CASE("sum_filter: gradient matches finite differences away from sum = 0") {
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.image_h = spec.image_w = 6;
    spec.conv = {3, 2, false, true};
    spec.widths = {2};
    PriorSpec prior = build_sumfilter(0.5, 0.8, spec);
    RngStream rng(10, 0);
    for (int rep = 0; rep < 10; ++rep) {
        ParamVector p = spec.make_params();
        for (double& w : p.data) w = rng.next_gaussian();
        // ensure filter sums are bounded away from the |.| kink
        auto w1 = p.block_span("W1");
        for (std::size_t f = 0; f < 2; ++f) {
            double s = 0.0;
            for (std::size_t i = 0; i < 9; ++i) s += w1[i * 2 + f];
            if (std::abs(s) < 0.01) w1[f] += 0.5;
        }
        Vector g(p.dim(), 0.0);
        prior_logpdf_grad(prior, p, g);
        CHECK(max_rel_err(g, fd_prior_grad(prior, p)) < 1e-5);
    }
}

TEST_CASE("sum_filter: density decreases monotonically in |sum|") {
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.image_h = spec.image_w = 6;
    spec.conv = {3, 1, false, true};
    spec.widths = {2};
    PriorSpec prior = build_sumfilter(1.0, 0.5, spec);
    ParamVector p = spec.make_params();
    // Shift only the filter mean: gaussian term fixed by keeping |w|^2 fixed
    // is fiddly; instead isolate the laplace term by differencing.
    auto w1 = p.block_span("W1");
    double prev = std::numeric_limits<double>::infinity();
    PriorSpec gauss;
    gauss.base.alpha2 = 1.0;
    for (double s : {0.0, 0.3, 0.9, 2.7}) {
        for (std::size_t i = 0; i < 9; ++i) w1[i] = s / 9.0;
        const double laplace_part = prior_logpdf(prior, p) - prior_logpdf(gauss, p);
        CHECK(laplace_part < prev + 1e-12);
        prev = laplace_part;
    }
}

TEST_CASE("sum_filter rejected for non-conv first layer") {
    ModelSpec mlp;
    mlp.kind = ModelKind::Mlp;
    mlp.widths = {4, 3, 2};
    CHECK_THROWS_AS(build_sumfilter(1.0, 1.0, mlp), ConfigError);
}

TEST_CASE("sum_filter sampling concentrates the filter sum") {
    ModelSpec spec;
    spec.kind = ModelKind::Cnn;
    spec.image_h = spec.image_w = 6;
    spec.conv = {3, 1, false, true};
    spec.widths = {2};
    const double a2 = 0.04;
    PriorSpec sf = build_sumfilter(a2, 0.05, spec);
    PriorSpec gauss;
    gauss.base.alpha2 = a2;
    ParamVector proto = spec.make_params();
    RngStream r1(11, 0), r2(11, 1);
    double s2_sf = 0.0, s2_g = 0.0;
    const int draws = 400;
    for (int k = 0; k < draws; ++k) {
        ParamVector dsf = sample_prior(sf, proto, r1);
        ParamVector dg = sample_prior(gauss, proto, r2);
        double ssf = 0.0, sg = 0.0;
        auto wsf = dsf.block_span("W1");
        auto wg = dg.block_span("W1");
        for (std::size_t i = 0; i < 9; ++i) {
            ssf += wsf[i];
            sg += wg[i];
        }
        s2_sf += ssf * ssf;
        s2_g += sg * sg;
    }
    CHECK(s2_sf / draws < 0.5 * s2_g / draws);
}

TEST_CASE("exp_norm radial sampler: p = 2 reproduces the gaussian") {
    PriorSpec prior;
    prior.base.family = PriorFamily::ExpNorm;
    prior.base.p = 2.0;
    prior.base.alpha2 = 0.09;
    ParamVector proto = flat_params(3);
    RngStream rng(12, 0);
    const int n = 50000;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        ParamVector d = sample_prior(prior, proto, rng);
        for (double w : d.data) s2 += w * w;
    }
    CHECK(s2 / (3.0 * n) == doctest::Approx(0.09).epsilon(0.05));
}
