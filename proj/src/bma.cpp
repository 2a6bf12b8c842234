#include "bnnshift/bma.hpp"

#include "bnnshift/errors.hpp"

namespace bnnshift {

Matrix predict_probs(const ModelSpec& spec, const ParamVector& params,
                     const Matrix& inputs) {
    const std::size_t n = inputs.rows(), k = spec.output_dim();
    Matrix out(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        Vector p = forward(spec, params, inputs.row(i));
        for (std::size_t j = 0; j < k; ++j) out(i, j) = p[j];
    }
    return out;
}

Predictive bma_predict(const std::vector<ParamVector>& samples, const ModelSpec& spec,
                       const Matrix& inputs) {
    if (samples.empty()) throw ConfigError("bma_predict: no posterior samples");
    const std::size_t n = inputs.rows(), k = spec.output_dim();
    Predictive pred;
    pred.mean = Matrix(n, k);
    pred.variance = Matrix(n, k);

    for (const ParamVector& w : samples) {
        Matrix probs = predict_probs(spec, w, inputs);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                pred.mean(i, j) += probs(i, j);
                pred.variance(i, j) += probs(i, j) * probs(i, j);
            }
    }
    const double s = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            pred.mean(i, j) /= s;
            pred.variance(i, j) =
                pred.variance(i, j) / s - pred.mean(i, j) * pred.mean(i, j);
            if (pred.variance(i, j) < 0.0) pred.variance(i, j) = 0.0;
        }

    pred.decision.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (pred.mean(i, j) > pred.mean(i, best)) best = j;
        pred.decision[i] = static_cast<int>(best);
    }
    return pred;
}

}  // namespace bnnshift
