#include "bnnshift/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "bnnshift/bma.hpp"
#include "bnnshift/errors.hpp"
#include "bnnshift/linalg.hpp"

namespace bnnshift {

std::pair<Vector, Matrix> empirical_covariance(const Matrix& inputs) {
    const std::size_t n = inputs.rows(), m = inputs.cols();
    if (n < 2) throw ConfigError("empirical_covariance: need at least 2 rows");
    Vector mean(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) mean[j] += inputs(i, j);
    for (double& v : mean) v /= static_cast<double>(n);

    Matrix sigma(m, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < m; ++a) {
            const double va = inputs(i, a) - mean[a];
            if (va == 0.0) continue;
            for (std::size_t b = a; b < m; ++b)
                sigma(a, b) += va * (inputs(i, b) - mean[b]);
        }
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a; b < m; ++b) {
            sigma(a, b) /= static_cast<double>(n - 1);
            sigma(b, a) = sigma(a, b);
        }
    return {std::move(mean), std::move(sigma)};
}

PcaBasis pca_from_covariance(const Vector& mean, const Matrix& sigma) {
    auto eig = eigh_symmetric(sigma, 1e-9);
    PcaBasis basis;
    basis.mean = mean;
    basis.components = std::move(eig.eigenvectors);
    basis.variances = std::move(eig.eigenvalues);
    for (double& v : basis.variances)
        if (v < 0.0) v = 0.0;  // rounding guard on zero modes
    return basis;
}

PcaBasis pca(const Matrix& inputs) {
    auto [mean, sigma] = empirical_covariance(inputs);
    return pca_from_covariance(mean, sigma);
}

double ks_two_sample(Vector a, Vector b) {
    if (a.empty() || b.empty()) throw ConfigError("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double ks = 0.0;
    std::size_t ia = 0, ib = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] <= b[ib])
            ++ia;
        else
            ++ib;
        const double fa = static_cast<double>(ia) / a.size();
        const double fb = static_cast<double>(ib) / b.size();
        ks = std::max(ks, std::abs(fa - fb));
    }
    return ks;
}

PriorMatchResult prior_match_test(const Vector& samples, double prior_mean,
                                  double prior_var, const Vector& prior_draws,
                                  const PriorMatchThresholds& thr) {
    if (samples.size() < 30)
        throw ConfigError("prior_match_test: need at least 30 samples");
    if (prior_var <= 0.0) throw ConfigError("prior_match_test: prior variance must be positive");

    PriorMatchResult r;
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    var /= static_cast<double>(samples.size() - 1);

    r.z = (mean - prior_mean) /
          std::sqrt(prior_var / static_cast<double>(samples.size()));
    r.variance_ratio = var / prior_var;
    r.ks = ks_two_sample(samples, prior_draws);
    r.pass = std::abs(r.z) < thr.z_max && r.variance_ratio > thr.ratio_lo &&
             r.variance_ratio < thr.ratio_hi && r.ks < thr.ks_max;
    return r;
}

std::vector<Vector> first_layer_projections(const std::vector<ParamVector>& samples,
                                            const ModelSpec& spec,
                                            const Matrix& directions,
                                            bool include_bias) {
    if (samples.empty()) throw ConfigError("first_layer_projections: no samples");
    FirstLayerView probe(spec, samples.front());
    const std::size_t m = probe.has_bias_row() ? probe.rows() - 1 : probe.rows();
    const std::size_t expect = m + (include_bias ? 1 : 0);
    if (directions.rows() != expect)
        throw ShapeError("first_layer_projections: direction dim " +
                         std::to_string(directions.rows()) + ", expected " +
                         std::to_string(expect));
    if (include_bias && !probe.has_bias_row())
        throw ShapeError("first_layer_projections: model has no first-layer bias");

    std::vector<Vector> out(directions.cols());
    for (auto& v : out) v.reserve(samples.size() * probe.cols());
    for (const auto& w : samples) {
        FirstLayerView view(spec, w);
        for (std::size_t j = 0; j < view.cols(); ++j)
            for (std::size_t k = 0; k < directions.cols(); ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += directions(i, k) * view(i, j);
                if (include_bias) proj += directions(m, k) * view(m, j);
                out[k].push_back(proj);
            }
    }
    return out;
}

Vector planted_projections(const std::vector<ParamVector>& samples,
                           const ModelSpec& spec, const Vector& c, double c0) {
    if (samples.empty()) throw ConfigError("planted_projections: no samples");
    FirstLayerView probe(spec, samples.front());
    const std::size_t m = probe.has_bias_row() ? probe.rows() - 1 : probe.rows();
    if (c.size() != m) throw ShapeError("planted_projections: c dimension mismatch");
    Vector out;
    out.reserve(samples.size() * probe.cols());
    for (const auto& w : samples) {
        FirstLayerView view(spec, w);
        for (std::size_t j = 0; j < view.cols(); ++j) {
            double proj = 0.0;
            for (std::size_t i = 0; i < m; ++i) proj += c[i] * view(i, j);
            if (probe.has_bias_row()) proj -= c0 * view(m, j);
            out.push_back(proj);
        }
    }
    return out;
}

ProjectionReport project_first_layer(const std::vector<ParamVector>& samples,
                                     const ModelSpec& spec, const Matrix& directions,
                                     bool include_bias, const PriorSpec& prior,
                                     RngStream& rng, const PriorMatchThresholds& thr,
                                     std::size_t prior_draws) {
    std::vector<Vector> projs =
        first_layer_projections(samples, spec, directions, include_bias);

    ProjectionReport report;
    for (std::size_t k = 0; k < projs.size(); ++k) {
        Vector dir = directions.col(k);
        double prior_var;
        if (prior.first_layer) {
            prior_var = prior.first_layer->variance_along(dir);
        } else {
            double nrm2 = 0.0;
            for (double v : dir) nrm2 += v * v;
            prior_var = prior.base.alpha2 * nrm2;
        }
        Vector draws(prior_draws);
        const double sd = std::sqrt(prior_var);
        for (double& d : draws) d = sd * rng.next_gaussian();

        PriorMatchResult r = prior_match_test(projs[k], 0.0, prior_var, draws, thr);
        DirectionReport dr;
        dr.direction = k;
        double mean = 0.0;
        for (double x : projs[k]) mean += x;
        dr.sample_mean = mean / static_cast<double>(projs[k].size());
        double var = 0.0;
        for (double x : projs[k]) var += (x - dr.sample_mean) * (x - dr.sample_mean);
        dr.sample_variance = var / static_cast<double>(projs[k].size() - 1);
        dr.prior_variance = prior_var;
        dr.ks = r.ks;
        dr.z = r.z;
        dr.pass = r.pass;
        report.directions.push_back(dr);
    }
    return report;
}

MetricBundle evaluate_probs(const Matrix& probs, const std::vector<int>& targets,
                            std::size_t ece_bins) {
    const std::size_t n = probs.rows(), k = probs.cols();
    if (n == 0 || targets.size() != n)
        throw ShapeError("evaluate_probs: target count mismatch");

    MetricBundle m;
    Vector bin_conf(ece_bins, 0.0), bin_acc(ece_bins, 0.0), bin_count(ece_bins, 0.0);
    double nll = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (probs(i, j) > probs(i, best)) best = j;
        const bool hit = static_cast<int>(best) == targets[i];
        if (hit) ++hits;
        nll -= std::log(probs(i, static_cast<std::size_t>(targets[i])));

        const double conf = probs(i, best);
        std::size_t bin = static_cast<std::size_t>(conf * static_cast<double>(ece_bins));
        if (bin >= ece_bins) bin = ece_bins - 1;
        bin_conf[bin] += conf;
        bin_acc[bin] += hit ? 1.0 : 0.0;
        bin_count[bin] += 1.0;
    }
    m.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    m.nll = nll / static_cast<double>(n);
    m.ece = 0.0;
    for (std::size_t b = 0; b < ece_bins; ++b) {
        if (bin_count[b] == 0.0) continue;
        m.ece += (bin_count[b] / static_cast<double>(n)) *
                 std::abs(bin_acc[b] / bin_count[b] - bin_conf[b] / bin_count[b]);
    }
    return m;
}

MetricBundle evaluate(const ModelSpec& spec, const std::vector<ParamVector>& samples,
                      const LabeledDataset& data) {
    if (data.n() == 0) throw ConfigError("evaluate: dataset is empty");
    Predictive pred = bma_predict(samples, spec, data.inputs);
    return evaluate_probs(pred.mean, data.targets_class);
}

MetricBundle evaluate(const ModelSpec& spec, const ParamVector& params,
                      const LabeledDataset& data) {
    if (data.n() == 0) throw ConfigError("evaluate: dataset is empty");
    return evaluate_probs(predict_probs(spec, params, data.inputs), data.targets_class);
}

std::vector<RobustnessRow> robustness_curve(
    const ModelSpec& spec,
    const std::vector<std::pair<std::string, std::vector<ParamVector>>>& predictors,
    const LabeledDataset& clean, const CorruptionSpec& family,
    const Vector& magnitudes, RngStream& rng) {
    if (magnitudes.empty() || magnitudes.front() != 0.0)
        throw ConfigError("robustness_curve: magnitudes must start at 0");
    for (std::size_t i = 1; i < magnitudes.size(); ++i)
        if (magnitudes[i] <= magnitudes[i - 1])
            throw ConfigError("robustness_curve: magnitudes must ascend");

    std::vector<RobustnessRow> rows;
    for (std::size_t mi = 0; mi < magnitudes.size(); ++mi) {
        CorruptionSpec scaled = family;
        switch (family.kind) {
            case CorruptionSpec::Kind::GaussianNoise:
            case CorruptionSpec::Kind::PcaDirectionalNoise:
                scaled.sigma = magnitudes[mi];
                break;
            case CorruptionSpec::Kind::ConstantShift:
                scaled.shift = magnitudes[mi];
                break;
            case CorruptionSpec::Kind::FeatureActivate:
                scaled.feature_value = magnitudes[mi];
                break;
            case CorruptionSpec::Kind::Translate:
                scaled.dx = static_cast<int>(magnitudes[mi]);
                break;
        }
        RngStream row_rng = rng.substream(mi);
        LabeledDataset shifted = corrupt(clean, scaled, row_rng);
        for (const auto& [name, samples] : predictors) {
            RobustnessRow row;
            row.magnitude = magnitudes[mi];
            row.predictor = name;
            row.metrics = evaluate(spec, samples, shifted);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<SpectrumRow> corruption_spectrum(const Matrix& clean, const Matrix& corrupted,
                                             const PcaBasis& basis) {
    if (clean.cols() != corrupted.cols() || clean.cols() != basis.components.rows())
        throw ShapeError("corruption_spectrum: dimension mismatch");

    auto component_variance = [&](const Matrix& rows, std::size_t k) {
        const std::size_t n = rows.rows();
        Vector projs(n);
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0;
            for (std::size_t j = 0; j < rows.cols(); ++j)
                p += (rows(i, j) - basis.mean[j]) * basis.components(j, k);
            projs[i] = p;
        }
        double mean = 0.0;
        for (double p : projs) mean += p;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double p : projs) var += (p - mean) * (p - mean);
        return var / static_cast<double>(n - 1);
    };

    std::vector<SpectrumRow> rows;
    for (std::size_t k = 0; k < basis.components.cols(); ++k) {
        SpectrumRow r;
        r.component = k;
        r.variance_before = component_variance(clean, k);
        r.variance_after = component_variance(corrupted, k);
        rows.push_back(r);
    }
    return rows;
}

Vector dead_row_logit_direction(const ModelSpec& spec, const ParamVector& params,
                                std::size_t feature) {
    if (spec.kind != ModelKind::Mlp)
        throw ConfigError("dead_row_logit_direction: MLP only");
    const std::size_t layers = spec.widths.size() - 1;
    const auto w1 = params.block_span("W1");
    const std::size_t h1 = spec.widths[1];
    Vector u(h1);
    for (std::size_t j = 0; j < h1; ++j) u[j] = w1[feature * h1 + j];

    auto act = [&](double z) {
        if (spec.activation == Activation::Relu) return z > 0.0 ? z : 0.0;
        if (spec.activation == Activation::LeakyRelu)
            return z > 0.0 ? z : spec.leaky_slope * z;
        return z;
    };

    for (std::size_t t = 2; t <= layers; ++t) {
        for (double& x : u) x = act(x);
        const auto wt = params.block_span("W" + std::to_string(t));
        const std::size_t in = spec.widths[t - 1], out = spec.widths[t];
        Vector next(out, 0.0);
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < out; ++j) next[j] += u[i] * wt[i * out + j];
        u = std::move(next);
    }
    return u;
}

bool is_epsilon_separable(const Vector& z, double eps) {
    if (z.size() < 2) return false;
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
        if (z[j] > z[best]) best = j;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (j != best && z[best] - z[j] <= eps) return false;
    return true;
}

}  // namespace bnnshift
