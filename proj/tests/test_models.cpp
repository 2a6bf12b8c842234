#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bnnshift/model.hpp"
#include "bnnshift/prior.hpp"
#include "bnnshift/rng.hpp"

using namespace bnnshift;

namespace {

ModelSpec small_mlp(std::vector<std::size_t> widths) {
    ModelSpec s;
    s.kind = ModelKind::Mlp;
    s.widths = std::move(widths);
    return s;
}

LabeledDataset random_class_data(std::size_t n, std::size_t m, std::size_t k,
                                 RngStream& rng) {
    LabeledDataset d;
    d.inputs = Matrix(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) d.inputs(i, j) = rng.next_gaussian();
    d.targets_class.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        d.targets_class[i] = static_cast<int>(rng.next_u64() % k);
    return d;
}

void randomize(ParamVector& p, RngStream& rng, double scale = 0.5) {
    for (double& w : p.data) w = scale * rng.next_gaussian();
}

// Central finite differences of the tempered log posterior.
Vector fd_grad(const ModelSpec& spec, const PriorSpec& prior, const ParamVector& params,
               const LabeledDataset& data, double T, double h = 1e-5) {
    Vector g(params.dim());
    ParamVector p = params;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double w0 = p.data[i];
        p.data[i] = w0 + h;
        double up = prior_logpdf(prior, p);
        if (data.n() > 0) up += log_likelihood(spec, p, data);
        p.data[i] = w0 - h;
        double um = prior_logpdf(prior, p);
        if (data.n() > 0) um += log_likelihood(spec, p, data);
        p.data[i] = w0;
        g[i] = (up - um) / (2.0 * h * T);
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

}  // namespace

TEST_CASE("forward: zero params give uniform softmax") {
    ModelSpec s = small_mlp({3, 4, 5});
    ParamVector p = s.make_params();
    Vector out = forward(s, p, Vector{0.1, -0.2, 0.3});
    double sum = 0.0;
    for (double v : out) {
        CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward: softmax output is a probability vector") {
    ModelSpec s = small_mlp({4, 6, 3});
    ParamVector p = s.make_params();
    RngStream rng(2, 0);
    randomize(p, rng, 2.0);
    Vector out = forward(s, p, Vector{1.0, -2.0, 0.5, 3.0});
    double sum = 0.0;
    for (double v : out) {
        CHECK(v > 0.0);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("forward: nalu computes the input product") {
    ModelSpec s;
    s.kind = ModelKind::Nalu;
    s.widths = {2};
    s.link = Link::Identity;
    s.likelihood.kind = LikelihoodKind::Gaussian;
    ParamVector p = s.make_params();
    p.data = {1.0, 1.0};
    Vector out = forward(s, p, Vector{2.0, 3.0});
    CHECK(out[0] == doctest::Approx(6.0).epsilon(1e-14));

    p.data = {0.5, -1.0};
    out = forward(s, p, Vector{4.0, 2.0});
    CHECK(out[0] == doctest::Approx(std::sqrt(4.0) / 2.0).epsilon(1e-14));

    CHECK_THROWS_AS(forward(s, p, Vector{-1.0, 2.0}), DomainError);
}

TEST_CASE("forward: hand-evaluated 2-2-2 relu mlp") {
    ModelSpec s = small_mlp({2, 2, 2});
    ParamVector p = s.make_params();
    // W1 = [[1, -1], [2, 0.5]], b1 = (0.5, -0.25)
    auto w1 = p.block_span("W1");
    w1[0] = 1.0; w1[1] = -1.0; w1[2] = 2.0; w1[3] = 0.5;
    auto b1 = p.block_span("b1");
    b1[0] = 0.5; b1[1] = -0.25;
    // W2 = [[1, 0], [-1, 1]], b2 = (0, 0.1)
    auto w2 = p.block_span("W2");
    w2[0] = 1.0; w2[1] = 0.0; w2[2] = -1.0; w2[3] = 1.0;
    auto b2 = p.block_span("b2");
    b2[0] = 0.0; b2[1] = 0.1;

    // x = (1, -1): z1 = (1 - 2 + 0.5, -1 - 0.5 - 0.25) = (-0.5, -1.75) -> relu 0
    // logits = b2 = (0, 0.1)
    Vector logits = forward_logits(s, p, Vector{1.0, -1.0});
    CHECK(logits[0] == doctest::Approx(0.0));
    CHECK(logits[1] == doctest::Approx(0.1));

    // x = (1, 1): z1 = (1 + 2 + 0.5, -1 + 0.5 - 0.25) = (3.5, -0.75) -> (3.5, 0)
    // logits = (3.5*1 + 0*-1 + 0, 3.5*0 + 0*1 + 0.1) = (3.5, 0.1)
    logits = forward_logits(s, p, Vector{1.0, 1.0});
    CHECK(logits[0] == doctest::Approx(3.5));
    CHECK(logits[1] == doctest::Approx(0.1));
}

TEST_CASE("forward: shape mismatch raises") {
    ModelSpec s = small_mlp({3, 2, 2});
    ParamVector p = s.make_params();
    CHECK_THROWS_AS(forward(s, p, Vector{1.0, 2.0}), ShapeError);
}

TEST_CASE("log_likelihood: uniform classifier") {
    ModelSpec s = small_mlp({3, 2, 4});
    ParamVector p = s.make_params();
    RngStream rng(3, 0);
    LabeledDataset d = random_class_data(10, 3, 4, rng);
    CHECK(log_likelihood(s, p, d) == doctest::Approx(10.0 * std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("log_likelihood: gaussian perfect fit") {
    ModelSpec s;
    s.kind = ModelKind::LinearFeatures;
    s.widths = {2};
    s.link = Link::Identity;
    s.likelihood = {LikelihoodKind::Gaussian, 0.3};
    ParamVector p = s.make_params();
    p.data = {1.0, 2.0};
    LabeledDataset d;
    d.inputs = Matrix(5, 2);
    d.targets_value.resize(5);
    RngStream rng(4, 0);
    for (std::size_t i = 0; i < 5; ++i) {
        d.inputs(i, 0) = rng.next_gaussian();
        d.inputs(i, 1) = rng.next_gaussian();
        d.targets_value[i] = d.inputs(i, 0) + 2.0 * d.inputs(i, 1);
    }
    CHECK(log_likelihood(s, p, d) ==
          doctest::Approx(-2.5 * std::log(2.0 * M_PI * 0.3)).epsilon(1e-12));
}

TEST_CASE("log_likelihood: equals sum of per-point terms") {
    ModelSpec s = small_mlp({3, 5, 3});
    ParamVector p = s.make_params();
    RngStream rng(5, 0);
    randomize(p, rng);
    LabeledDataset d = random_class_data(7, 3, 3, rng);
    double total = 0.0;
    for (std::size_t i = 0; i < d.n(); ++i) {
        LabeledDataset one;
        one.inputs = Matrix(1, 3);
        for (std::size_t j = 0; j < 3; ++j) one.inputs(0, j) = d.inputs(i, j);
        one.targets_class = {d.targets_class[i]};
        total += log_likelihood(s, p, one);
    }
    CHECK(log_likelihood(s, p, d) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("grad: finite differences on a 2-4-2 mlp") {
    ModelSpec s = small_mlp({2, 4, 2});
    ParamVector p = s.make_params();
    RngStream rng(6, 0);
    randomize(p, rng);
    LabeledDataset d = random_class_data(6, 2, 2, rng);
    PriorSpec prior;
    prior.base.alpha2 = 0.5;
    Vector g = grad_log_posterior(s, prior, p, d, 1.0);
    Vector fd = fd_grad(s, prior, p, d, 1.0);
    CHECK(max_rel_err(g, fd) < 1e-4);
}

TEST_CASE("grad: finite differences across architectures") {
    RngStream rng(7, 0);
    PriorSpec prior;
    prior.base.alpha2 = 0.25;

    for (int rep = 0; rep < 20; ++rep) {
        // mlp
        {
            ModelSpec s = small_mlp({3, 4, 2});
            ParamVector p = s.make_params();
            randomize(p, rng);
            LabeledDataset d = random_class_data(4, 3, 2, rng);
            CHECK(max_rel_err(grad_log_posterior(s, prior, p, d, 1.0),
                              fd_grad(s, prior, p, d, 1.0)) < 1e-4);
        }
        // cnn
        {
            ModelSpec s;
            s.kind = ModelKind::Cnn;
            s.image_h = s.image_w = 6;
            s.conv = {3, 2, false, true};
            s.widths = {3, 2};
            ParamVector p = s.make_params();
            randomize(p, rng);
            LabeledDataset d;
            d.inputs = Matrix(3, 36);
            d.image_h = d.image_w = 6;
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 36; ++j) d.inputs(i, j) = rng.next_gaussian();
            d.targets_class = {0, 1, 0};
            CHECK(max_rel_err(grad_log_posterior(s, prior, p, d, 1.0),
                              fd_grad(s, prior, p, d, 1.0)) < 1e-4);
        }
        // nalu
        {
            ModelSpec s;
            s.kind = ModelKind::Nalu;
            s.widths = {3};
            s.link = Link::Identity;
            s.likelihood = {LikelihoodKind::Gaussian, 0.5};
            ParamVector p = s.make_params();
            randomize(p, rng);
            LabeledDataset d;
            d.inputs = Matrix(4, 3);
            d.targets_value.resize(4);
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 3; ++j)
                    d.inputs(i, j) = 0.5 + 2.0 * rng.next_unit();
                d.targets_value[i] = 0.5 + rng.next_unit();
            }
            CHECK(max_rel_err(grad_log_posterior(s, prior, p, d, 1.0),
                              fd_grad(s, prior, p, d, 1.0)) < 1e-4);
        }
    }
}

TEST_CASE("grad: prior-only case is -w/(alpha^2 T)") {
    ModelSpec s = small_mlp({2, 3, 2});
    ParamVector p = s.make_params();
    RngStream rng(8, 0);
    randomize(p, rng);
    PriorSpec prior;
    prior.base.alpha2 = 0.04;
    LabeledDataset empty;
    for (double T : {1.0, 0.5}) {
        Vector g = grad_log_posterior(s, prior, p, empty, T);
        for (std::size_t i = 0; i < p.dim(); ++i)
            CHECK(g[i] == doctest::Approx(-p.data[i] / (0.04 * T)).epsilon(1e-12));
    }
}

TEST_CASE("grad: tempering scales gradients exactly") {
    ModelSpec s = small_mlp({2, 3, 2});
    ParamVector p = s.make_params();
    RngStream rng(9, 0);
    randomize(p, rng);
    LabeledDataset d = random_class_data(5, 2, 2, rng);
    PriorSpec prior;
    Vector g1 = grad_log_posterior(s, prior, p, d, 1.0);
    Vector g2 = grad_log_posterior(s, prior, p, d, 0.5);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("first_layer_view: mlp and cnn shapes") {
    ModelSpec mlp = small_mlp({3, 2, 2});
    ParamVector p = mlp.make_params();
    RngStream rng(10, 0);
    randomize(p, rng);
    FirstLayerView v(mlp, p);
    CHECK(v.rows() == 4);  // 3 weights + bias
    CHECK(v.cols() == 2);
    CHECK(v.has_bias_row());

    ModelSpec cnn;
    cnn.kind = ModelKind::Cnn;
    cnn.image_h = cnn.image_w = 8;
    cnn.conv = {3, 6, false, true};
    cnn.widths = {2};
    ParamVector pc = cnn.make_params();
    FirstLayerView vc(cnn, pc);
    CHECK(vc.rows() == 10);  // 9 weights + bias
    CHECK(vc.cols() == 6);
}

TEST_CASE("first_layer_view: entries alias flat storage at layout offsets") {
    ModelSpec s = small_mlp({3, 2, 2});
    ParamVector p = s.make_params();
    RngStream rng(11, 0);
    randomize(p, rng);
    FirstLayerView v(s, p);
    const auto& wb = p.block("W1");
    const auto& bb = p.block("b1");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(v(i, j) == p.data[wb.offset + i * 2 + j]);
    for (std::size_t j = 0; j < 2; ++j) CHECK(v(3, j) == p.data[bb.offset + j]);
}

TEST_CASE("relu positive homogeneity") {
    ModelSpec s = small_mlp({2, 3, 2});
    for (double c : {0.5, 2.0, 7.0}) {
        for (double z : {-1.5, -0.1, 0.0, 0.3, 2.5}) {
            const double phi_cz = std::max(c * z, 0.0);
            const double c_phiz = c * std::max(z, 0.0);
            CHECK(phi_cz == doctest::Approx(c_phiz).epsilon(1e-14));
        }
    }
    // At the network level: scaling first-layer weights and bias by c > 0
    // scales hidden activations by c.
    ParamVector p = s.make_params();
    RngStream rng(12, 0);
    randomize(p, rng);
    Vector x = {0.7, -0.3};
    Vector base = forward_logits(s, p, x);
    ParamVector p2 = p;
    const double c = 3.0;
    for (double& w : p2.block_span("W1")) w *= c;
    for (double& b : p2.block_span("b1")) b *= c;
    // logits are linear in the hidden activations given fixed W2
    Vector scaled = forward_logits(s, p2, x);
    auto b2 = p.block_span("b2");
    for (std::size_t j = 0; j < 2; ++j)
        CHECK(scaled[j] - b2[j] == doctest::Approx(c * (base[j] - b2[j])).epsilon(1e-12));
}

TEST_CASE("dead feature: likelihood exactly invariant to its first-layer row") {
    ModelSpec s = small_mlp({3, 4, 2});
    ParamVector p = s.make_params();
    RngStream rng(13, 0);
    randomize(p, rng);
    LabeledDataset d = random_class_data(8, 3, 2, rng);
    for (std::size_t i = 0; i < d.n(); ++i) d.inputs(i, 1) = 0.0;  // kill feature 1

    const double base = log_likelihood(s, p, d);
    auto w1 = p.block_span("W1");
    // Row 1 of W1 (stride = hidden width 4)
    w1[1 * 4 + 0] = 17.0;
    w1[1 * 4 + 1] = -3.5;
    w1[1 * 4 + 2] = 0.0;
    w1[1 * 4 + 3] = 123.25;
    CHECK(log_likelihood(s, p, d) == base);  // exact float equality
}

TEST_CASE("conv output at every location equals the dense patch product") {
    // Identity activation, no pooling, and a one-hot dense readout expose each
    // conv output as a logit; compare against the hand-computed patch product.
    ModelSpec s;
    s.kind = ModelKind::Cnn;
    s.image_h = 5;
    s.image_w = 6;
    s.conv = {3, 2, false, false};
    s.widths = {1};
    s.activation = Activation::Identity;
    s.link = Link::Identity;
    s.likelihood = {LikelihoodKind::Gaussian, 1.0};
    ParamVector p = s.make_params();
    RngStream rng(14, 0);
    randomize(p, rng);
    for (double& b : p.block_span("b2")) b = 0.0;

    Vector img(30);
    for (double& v : img) v = rng.next_gaussian();

    const std::size_t K = 3, oh = 3, ow = 4, F = 2;
    auto wf = p.block_span("W1");
    auto bf = p.block_span("b1");
    auto w2 = p.block_span("W2");
    for (std::size_t unit = 0; unit < oh * ow * F; ++unit) {
        for (double& w : w2) w = 0.0;
        w2[unit] = 1.0;
        const double net = forward_logits(s, p, img)[0];

        const std::size_t pos = unit / F, f = unit % F;
        const std::size_t oy = pos / ow, ox = pos % ow;
        double dense = bf[f];
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx)
                dense += img[(oy + ky) * 6 + (ox + kx)] * wf[(ky * K + kx) * F + f];
        CHECK(std::abs(net - dense) < 1e-12);
    }
}

TEST_CASE("model validation errors") {
    ModelSpec s;
    s.kind = ModelKind::Cnn;
    s.image_h = s.image_w = 6;
    s.conv = {3, 2, false, true};
    s.widths = {2};
    CHECK_NOTHROW(s.validate());
    s.image_h = s.image_w = 5;  // conv out 3x3, odd: pooling impossible
    CHECK_THROWS_AS(s.validate(), ConfigError);

    ModelSpec bad = small_mlp({4});
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
