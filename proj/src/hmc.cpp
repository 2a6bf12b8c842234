#include "bnnshift/hmc.hpp"

#include <cmath>

#include "bnnshift/errors.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

namespace {

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double kinetic(const Vector& p) {
    double k = 0.0;
    for (double x : p) k += x * x;
    return 0.5 * k;
}

struct Target {
    const LogDensityFn* logp;
    const GradFn* grad;
};

// One Metropolis-adjusted trajectory from (q, logp_q); updates in place and
// reports acceptance. Divergent trajectories are rejected outright.
bool hmc_step(const Target& t, ParamVector& q, double& logp_q, double step,
              std::size_t steps, RngStream& rng, double& energy,
              std::size_t& divergences) {
    Vector p = rng.gaussian_vector(q.dim());
    const double h0 = -logp_q + kinetic(p);
    LeapfrogResult traj = leapfrog_trajectory(q, p, *t.grad, step, steps);
    if (traj.diverged) {
        ++divergences;
        energy = h0;
        return false;
    }
    const double logp_new = (*t.logp)(traj.q);
    const double h1 = -logp_new + kinetic(traj.p);
    if (!std::isfinite(h1)) {
        ++divergences;
        energy = h0;
        return false;
    }
    const double log_ratio = h0 - h1;
    if (log_ratio >= 0.0 || rng.next_unit() < std::exp(log_ratio)) {
        q = std::move(traj.q);
        logp_q = logp_new;
        energy = h1;
        return true;
    }
    energy = h0;
    return false;
}

// Short pilot runs, doubling/halving the step until the accept rate lands in
// [0.6, 0.95].
double calibrate_step(const Target& t, const ParamVector& init, double logp_init,
                      std::size_t steps, RngStream rng, double sigma_ref,
                      std::size_t dim) {
    double step = 0.5 * sigma_ref / std::sqrt(static_cast<double>(std::max<std::size_t>(dim, 1)));
    for (int attempt = 0; attempt < 14; ++attempt) {
        ParamVector q = init;
        double logp_q = logp_init;
        std::size_t div = 0;
        int accepted = 0;
        const int pilot_iters = 20;
        for (int i = 0; i < pilot_iters; ++i) {
            double energy;
            if (hmc_step(t, q, logp_q, step, steps, rng, energy, div)) ++accepted;
        }
        const double rate = static_cast<double>(accepted) / pilot_iters;
        if (rate < 0.6)
            step *= 0.5;
        else if (rate > 0.95)
            step *= 1.5;
        else
            return step;
    }
    return step;
}

}  // namespace

void HmcConfig::validate() const {
    if (trajectory == TrajectoryRule::Explicit && step_size < 0.0)
        throw ConfigError("hmc: step_size must be non-negative");
    if (leapfrog_steps == 0) throw ConfigError("hmc: leapfrog_steps must be positive");
    if (burn_in >= num_iterations)
        throw ConfigError("hmc: burn_in must be smaller than num_iterations");
    if (temperature <= 0.0) throw ConfigError("hmc: temperature must be positive");
}

LeapfrogResult leapfrog_trajectory(const ParamVector& q0, const Vector& p0,
                                   const GradFn& grad, double step,
                                   std::size_t steps) {
    if (p0.size() != q0.dim()) throw ShapeError("leapfrog: momentum dimension mismatch");
    LeapfrogResult r;
    r.q = q0;
    r.p = p0;
    if (steps == 0) return r;

    Vector g = grad(r.q);
    if (!all_finite(g)) {
        r.diverged = true;
        return r;
    }
    // half step for momentum, alternate full steps, half step at the end
    axpy(0.5 * step, g, r.p);
    for (std::size_t s = 0; s < steps; ++s) {
        axpy(step, r.p, r.q.data);
        if (!all_finite(r.q.data)) {
            r.diverged = true;
            return r;
        }
        g = grad(r.q);
        if (!all_finite(g)) {
            r.diverged = true;
            return r;
        }
        axpy(s + 1 == steps ? 0.5 * step : step, g, r.p);
    }
    return r;
}

Chain hmc_sample_fn(const LogDensityFn& log_density, const GradFn& grad,
                    const ParamVector& init, HmcConfig cfg, double sigma_ref) {
    cfg.validate();
    Target t{&log_density, &grad};
    RngStream rng(cfg.seed, cfg.stream);
    RngStream chain_rng = rng.substream(1);

    if (cfg.trajectory == TrajectoryRule::PiSigmaHalf) {
        cfg.step_size = (M_PI * sigma_ref / 2.0) / static_cast<double>(cfg.leapfrog_steps);
    } else if (cfg.step_size == 0.0) {
        cfg.step_size = calibrate_step(t, init, log_density(init), cfg.leapfrog_steps,
                                       rng.substream(2), sigma_ref, init.dim());
    }

    Chain chain;
    chain.config = cfg;
    chain.samples.reserve(cfg.num_iterations - cfg.burn_in);
    chain.accept_flags.reserve(cfg.num_iterations);
    chain.energies.reserve(cfg.num_iterations);

    ParamVector q = init;
    double logp_q = log_density(q);
    if (!std::isfinite(logp_q))
        throw NumericError("hmc: initial state has non-finite log density");

    std::size_t accepted = 0;
    for (std::size_t it = 0; it < cfg.num_iterations; ++it) {
        double energy = 0.0;
        // Randomize the trajectory length by +-20% around the base step; exact
        // trajectory lengths hit periodicities of near-quadratic targets (the
        // pi*sigma/2 rule is resonant for the tempered gaussian at T = 1/k^2).
        const double step = cfg.step_size * (0.8 + 0.4 * chain_rng.next_unit());
        const bool ok = hmc_step(t, q, logp_q, step, cfg.leapfrog_steps,
                                 chain_rng, energy, chain.divergences);
        if (ok) ++accepted;
        chain.accept_flags.push_back(ok);
        chain.energies.push_back(energy);
        if (it >= cfg.burn_in) chain.samples.push_back(q);
    }
    chain.accept_rate = static_cast<double>(accepted) / cfg.num_iterations;
    chain.low_accept_warning = chain.accept_rate < 0.1;
    return chain;
}

Chain hmc_sample(const ModelSpec& spec, const PriorSpec& prior,
                 const LabeledDataset& data, const HmcConfig& cfg) {
    spec.validate();
    prior.validate();
    const double T = cfg.temperature;

    LogDensityFn logp = [&spec, &prior, &data, T](const ParamVector& w) {
        double lp = prior_logpdf(prior, w);
        if (data.n() > 0) lp += log_likelihood(spec, w, data);
        return lp / T;
    };
    GradFn grad = [&spec, &prior, &data, T](const ParamVector& w) {
        return grad_log_posterior(spec, prior, w, data, T);
    };

    ParamVector proto = spec.make_params();
    RngStream init_rng = RngStream(cfg.seed, cfg.stream).substream(0);
    ParamVector init = sample_prior(prior, proto, init_rng);
    return hmc_sample_fn(logp, grad, init, cfg, prior.reference_std());
}

}  // namespace bnnshift
