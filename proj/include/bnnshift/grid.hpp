#pragma once

#include <functional>

#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"
#include "bnnshift/model.hpp"
#include "bnnshift/prior.hpp"

namespace bnnshift {

// Brute-force posterior on a tensor-product grid of up to 3 parameters,
// normalized by the trapezoid rule.
struct GridPosterior {
    std::vector<Vector> axes;  // ascending nodes per parameter
    Vector log_density;        // unnormalized log posterior, row-major over axes
    double log_normalizer = 0.0;

    // Normalized marginal density on the nodes of one axis.
    Vector marginal(std::size_t axis) const;
    double mean(std::size_t axis) const;
};

// Evaluate an arbitrary log-unnormalized posterior over the grid.
GridPosterior grid_posterior_fn(const std::function<double(const Vector&)>& log_unnorm,
                                std::vector<Vector> axes);

// Convenience: model + prior + data at a given temperature; parameter count
// (total over blocks) must be <= 3 and each axis <= 401 nodes.
GridPosterior grid_posterior(const ModelSpec& spec, const PriorSpec& prior,
                             const LabeledDataset& data, std::vector<Vector> axes,
                             double temperature = 1.0);

// Uniform grid of `count` nodes spanning center +- halfwidth.
Vector make_axis(double center, double halfwidth, std::size_t count);

}  // namespace bnnshift
