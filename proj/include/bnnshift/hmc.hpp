#pragma once

#include <cstdint>
#include <functional>

#include "bnnshift/dataset.hpp"
#include "bnnshift/model.hpp"
#include "bnnshift/param_vector.hpp"
#include "bnnshift/prior.hpp"

namespace bnnshift {

enum class TrajectoryRule { Explicit, PiSigmaHalf };

struct HmcConfig {
    double step_size = 0.0;  // Explicit rule with 0 => pilot-calibrated
    std::size_t leapfrog_steps = 50;
    TrajectoryRule trajectory = TrajectoryRule::PiSigmaHalf;
    std::size_t num_iterations = 100;
    std::size_t burn_in = 10;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;  // chain id; parallel chains use distinct streams

    void validate() const;
};

struct Chain {
    std::vector<ParamVector> samples;  // post burn-in, one per kept iteration
    std::vector<bool> accept_flags;    // all iterations
    Vector energies;                   // hamiltonian after each iteration
    HmcConfig config;                  // snapshot with the resolved step size
    double accept_rate = 0.0;
    bool low_accept_warning = false;   // accept rate < 0.1
    std::size_t divergences = 0;
};

using LogDensityFn = std::function<double(const ParamVector&)>;
using GradFn = std::function<Vector(const ParamVector&)>;

struct LeapfrogResult {
    ParamVector q;
    Vector p;
    bool diverged = false;
};

// Leapfrog integration of Hamiltonian dynamics for target log density with
// gradient grad (of the LOG density); volume-preserving and time-reversible.
LeapfrogResult leapfrog_trajectory(const ParamVector& q, const Vector& p,
                                   const GradFn& grad, double step,
                                   std::size_t steps);

// Metropolis-adjusted HMC targeting exp(log_density). sigma_ref feeds the
// pi-sigma-half trajectory rule.
Chain hmc_sample_fn(const LogDensityFn& log_density, const GradFn& grad,
                    const ParamVector& init, HmcConfig cfg, double sigma_ref);

// Samples p_T(w | D) ∝ (p(D|w) p(w))^{1/T}; the chain is initialized from a
// prior draw.
Chain hmc_sample(const ModelSpec& spec, const PriorSpec& prior,
                 const LabeledDataset& data, const HmcConfig& cfg);

}  // namespace bnnshift
