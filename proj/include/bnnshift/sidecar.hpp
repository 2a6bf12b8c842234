#pragma once

#include <string>

#include "bnnshift/hmc.hpp"
#include "bnnshift/prior.hpp"

namespace bnnshift {

// Chain persistence: <path>.bin holds the layout map header and float64
// little-endian samples; <path>.json holds config, accept rate and energies.
void save_chain(const Chain& chain, const std::string& path_prefix);
Chain load_chain(const std::string& path_prefix);

// Covariance-prior sidecar (factor L, data mean, spectrum) so the expensive
// eigendecomposition is computed once per dataset.
void save_covariance_prior(const CovariancePrior& cp, const std::string& path);
CovariancePrior load_covariance_prior(const std::string& path);

}  // namespace bnnshift
