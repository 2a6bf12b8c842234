#pragma once

#include "bnnshift/dataset.hpp"
#include "bnnshift/hmc.hpp"
#include "bnnshift/model.hpp"

namespace bnnshift {

// Monte Carlo predictive distribution over a batch of inputs.
struct Predictive {
    Matrix mean;       // n x output_dim, averaged link outputs
    Matrix variance;   // n x output_dim, per-class variance over samples
    std::vector<int> decision;  // argmax of the averaged outputs
};

// Link outputs for every row of inputs under a single parameter vector.
Matrix predict_probs(const ModelSpec& spec, const ParamVector& params,
                     const Matrix& inputs);

Predictive bma_predict(const std::vector<ParamVector>& samples, const ModelSpec& spec,
                       const Matrix& inputs);

inline Predictive bma_predict(const Chain& chain, const ModelSpec& spec,
                              const Matrix& inputs) {
    return bma_predict(chain.samples, spec, inputs);
}

}  // namespace bnnshift
