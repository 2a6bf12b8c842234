#pragma once

#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

// Covariate-shift operators: inputs change, labels never do.
struct CorruptionSpec {
    enum class Kind {
        GaussianNoise,      // x += sigma * z, iid
        ConstantShift,      // x += shift everywhere
        PcaDirectionalNoise,  // x += sigma * sum_{i in [begin,end)} z_i basis_i
        Translate,          // integer roll with zero fill (images only)
        FeatureActivate     // set one feature to a fixed value
    };
    Kind kind = Kind::GaussianNoise;
    double sigma = 0.0;
    double shift = 0.0;
    std::size_t component_begin = 0, component_end = 0;
    Matrix basis;  // reference basis columns for directional noise
    int dx = 0, dy = 0;
    std::size_t feature_index = 0;
    double feature_value = 0.0;

    std::string tag() const;
};

LabeledDataset corrupt(const LabeledDataset& data, const CorruptionSpec& spec,
                       RngStream& rng);

}  // namespace bnnshift
