#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bnnshift/corrupt.hpp"
#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"
#include "bnnshift/model.hpp"
#include "bnnshift/prior.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

struct PcaBasis {
    Vector mean;
    Matrix components;  // columns, descending explained variance
    Vector variances;
};

// mean and unbiased covariance of the rows; covariance exactly symmetric.
std::pair<Vector, Matrix> empirical_covariance(const Matrix& inputs);

PcaBasis pca(const Matrix& inputs);
PcaBasis pca_from_covariance(const Vector& mean, const Matrix& sigma);

struct PriorMatchThresholds {
    double z_max = 3.0;
    double ratio_lo = 0.85, ratio_hi = 1.15;
    double ks_max = 0.05;
};

struct PriorMatchResult {
    double z = 0.0;
    double variance_ratio = 0.0;
    double ks = 0.0;
    bool pass = false;
};

// |z| < 3, variance ratio in [0.85, 1.15], two-sample KS < 0.05 against
// fresh prior draws; needs >= 30 samples.
PriorMatchResult prior_match_test(const Vector& samples, double prior_mean,
                                  double prior_var, const Vector& prior_draws,
                                  const PriorMatchThresholds& thr = {});

double ks_two_sample(Vector a, Vector b);

struct DirectionReport {
    std::size_t direction = 0;
    double sample_mean = 0.0;
    double sample_variance = 0.0;
    double prior_variance = 0.0;
    double ks = 0.0;
    double z = 0.0;
    bool pass = false;
};

struct ProjectionReport {
    std::vector<DirectionReport> directions;
};

// Pooled first-layer projections per direction column: for every posterior
// sample and hidden unit j, v . (w_{.j}[, b_j]). Directions live in R^m, or
// R^{m+1} with the bias coordinate appended when include_bias is set.
std::vector<Vector> first_layer_projections(const std::vector<ParamVector>& samples,
                                            const ModelSpec& spec,
                                            const Matrix& directions,
                                            bool include_bias);

// Prop.-2 statistic sum_i c_i w_ij - c0 b_j for every sample and unit.
Vector planted_projections(const std::vector<ParamVector>& samples,
                           const ModelSpec& spec, const Vector& c, double c0);

// Per-direction prior-match report; prior variance comes from the first-layer
// covariance prior when present, else the isotropic base variance.
ProjectionReport project_first_layer(const std::vector<ParamVector>& samples,
                                     const ModelSpec& spec, const Matrix& directions,
                                     bool include_bias, const PriorSpec& prior,
                                     RngStream& rng,
                                     const PriorMatchThresholds& thr = {},
                                     std::size_t prior_draws = 10000);

struct MetricBundle {
    double accuracy = 0.0;
    double nll = 0.0;
    double ece = 0.0;
};

MetricBundle evaluate_probs(const Matrix& probs, const std::vector<int>& targets,
                            std::size_t ece_bins = 15);

// BMA / ensemble predictor (averaged link outputs) and MAP predictor.
MetricBundle evaluate(const ModelSpec& spec, const std::vector<ParamVector>& samples,
                      const LabeledDataset& data);
MetricBundle evaluate(const ModelSpec& spec, const ParamVector& params,
                      const LabeledDataset& data);

struct RobustnessRow {
    double magnitude = 0.0;
    std::string predictor;
    MetricBundle metrics;
};

// Evaluate every predictor on the clean data (magnitude 0) and under the
// corruption family scaled to each magnitude; deterministic given the rng.
std::vector<RobustnessRow> robustness_curve(
    const ModelSpec& spec,
    const std::vector<std::pair<std::string, std::vector<ParamVector>>>& predictors,
    const LabeledDataset& clean, const CorruptionSpec& family,
    const Vector& magnitudes, RngStream& rng);

struct SpectrumRow {
    std::size_t component = 0;
    double variance_before = 0.0;
    double variance_after = 0.0;
};

// Variance of the projections onto each basis component before and after a
// corruption; rows and basis may live in patch space.
std::vector<SpectrumRow> corruption_spectrum(const Matrix& clean, const Matrix& corrupted,
                                             const PcaBasis& basis);

// Logit direction contributed by first-layer row `feature` at large inputs:
// z = phi(...phi(phi(W1_row) W2)...) W^l with no bias terms (MLP only).
Vector dead_row_logit_direction(const ModelSpec& spec, const ParamVector& params,
                                std::size_t feature);

bool is_epsilon_separable(const Vector& z, double eps);

}  // namespace bnnshift
