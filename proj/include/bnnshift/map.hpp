#pragma once

#include <cstdint>
#include <optional>

#include "bnnshift/dataset.hpp"
#include "bnnshift/model.hpp"
#include "bnnshift/param_vector.hpp"
#include "bnnshift/prior.hpp"

namespace bnnshift {

enum class OptimizerKind { SgdMomentum, Adam, Adadelta };
enum class LrSchedule { Constant, Cosine };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 0.1;
    LrSchedule schedule = LrSchedule::Cosine;
    double momentum = 0.9;
    // When set, replaces the prior term with (wd/2)|w|^2 on the mean objective;
    // wd = 1/(alpha^2 n) reproduces the Gaussian-prior MAP. Unset => -log prior.
    std::optional<double> weight_decay;
    std::size_t epochs = 1000;
    double init_bound = 0.01;  // uniform U(-b, b) initialization
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    void validate() const;
};

struct MapResult {
    ParamVector params;
    Vector loss_trace;  // objective per epoch (mean NLL + regularizer)
};

// Raised when the loss goes non-finite; carries the last finite iterate.
struct OptimizationError : NumericError {
    OptimizationError(const std::string& msg, ParamVector last)
        : NumericError(msg), last_finite(std::move(last)) {}
    ParamVector last_finite;
};

MapResult map_fit(const ModelSpec& spec, const PriorSpec& prior,
                  const LabeledDataset& data, const OptimizerConfig& cfg);

// n independent MAP fits with distinct streams; member 0 coincides with
// map_fit under the same config.
std::vector<MapResult> ensemble_fit(const ModelSpec& spec, const PriorSpec& prior,
                                    const LabeledDataset& data,
                                    const OptimizerConfig& cfg, std::size_t n,
                                    std::size_t threads = 1);

}  // namespace bnnshift
