#include "bnnshift/map.hpp"

#include <cmath>
#include <future>

#include "bnnshift/errors.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

namespace {

// Mean objective and gradient: -(1/n) log p(D|w) plus either -(1/n) log p(w)
// or the explicit ridge.
double objective_grad(const ModelSpec& spec, const PriorSpec& prior,
                      const LabeledDataset& data, const OptimizerConfig& cfg,
                      const ParamVector& w, Vector& grad) {
    const double n = static_cast<double>(data.n());
    grad.assign(w.dim(), 0.0);
    double loss = -log_likelihood_grad(spec, w, data, grad) / n;
    for (double& g : grad) g = -g / n;

    if (cfg.weight_decay.has_value()) {
        const double wd = *cfg.weight_decay;
        if (wd != 0.0) {
            double sq = 0.0;
            for (std::size_t i = 0; i < w.dim(); ++i) {
                grad[i] += wd * w.data[i];
                sq += w.data[i] * w.data[i];
            }
            loss += 0.5 * wd * sq;
        }
    } else {
        Vector pgrad(w.dim(), 0.0);
        loss -= prior_logpdf_grad(prior, w, pgrad) / n;
        for (std::size_t i = 0; i < w.dim(); ++i) grad[i] -= pgrad[i] / n;
    }
    return loss;
}

}  // namespace

void OptimizerConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("optimizer: learning_rate must be >= 0");
    if (momentum < 0.0) throw ConfigError("optimizer: momentum must be >= 0");
    if (weight_decay && *weight_decay < 0.0)
        throw ConfigError("optimizer: weight_decay must be >= 0");
    if (epochs == 0) throw ConfigError("optimizer: epochs must be positive");
    if (init_bound < 0.0) throw ConfigError("optimizer: init_bound must be >= 0");
}

MapResult map_fit(const ModelSpec& spec, const PriorSpec& prior,
                  const LabeledDataset& data, const OptimizerConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (data.n() == 0) throw ConfigError("map_fit: dataset is empty");

    ParamVector w = spec.make_params();
    RngStream rng(cfg.seed, cfg.stream);
    if (cfg.init_bound > 0.0)
        for (double& x : w.data) x = cfg.init_bound * (2.0 * rng.next_unit() - 1.0);

    Vector grad(w.dim(), 0.0);
    Vector velocity(w.dim(), 0.0);
    Vector adam_m(w.dim(), 0.0), adam_v(w.dim(), 0.0);
    Vector ada_g2(w.dim(), 0.0), ada_d2(w.dim(), 0.0);

    MapResult result;
    result.loss_trace.reserve(cfg.epochs);
    ParamVector last_finite = w;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = objective_grad(spec, prior, data, cfg, w, grad);
        if (!std::isfinite(loss))
            throw OptimizationError("map_fit: loss diverged at epoch " +
                                        std::to_string(epoch),
                                    std::move(last_finite));
        last_finite = w;
        result.loss_trace.push_back(loss);

        double lr = cfg.learning_rate;
        if (cfg.schedule == LrSchedule::Cosine)
            lr *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                        static_cast<double>(cfg.epochs)));

        switch (cfg.kind) {
            case OptimizerKind::SgdMomentum:
                for (std::size_t i = 0; i < w.dim(); ++i) {
                    velocity[i] = cfg.momentum * velocity[i] - lr * grad[i];
                    w.data[i] += velocity[i];
                }
                break;
            case OptimizerKind::Adam: {
                const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double t = static_cast<double>(epoch + 1);
                for (std::size_t i = 0; i < w.dim(); ++i) {
                    adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
                    adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
                    const double mhat = adam_m[i] / (1.0 - std::pow(b1, t));
                    const double vhat = adam_v[i] / (1.0 - std::pow(b2, t));
                    w.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                }
                break;
            }
            case OptimizerKind::Adadelta: {
                const double rho = 0.95, eps = 1e-6;
                for (std::size_t i = 0; i < w.dim(); ++i) {
                    ada_g2[i] = rho * ada_g2[i] + (1.0 - rho) * grad[i] * grad[i];
                    const double dx = -std::sqrt((ada_d2[i] + eps) / (ada_g2[i] + eps)) *
                                      grad[i];
                    ada_d2[i] = rho * ada_d2[i] + (1.0 - rho) * dx * dx;
                    w.data[i] += lr * dx;
                }
                break;
            }
        }
    }

    result.params = std::move(w);
    return result;
}

std::vector<MapResult> ensemble_fit(const ModelSpec& spec, const PriorSpec& prior,
                                    const LabeledDataset& data,
                                    const OptimizerConfig& cfg, std::size_t n,
                                    std::size_t threads) {
    if (n == 0) throw ConfigError("ensemble_fit: need at least one member");
    std::vector<MapResult> members(n);
    auto run_member = [&](std::size_t i) {
        OptimizerConfig member_cfg = cfg;
        member_cfg.stream = cfg.stream + i;
        return map_fit(spec, prior, data, member_cfg);
    };
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) members[i] = run_member(i);
        return members;
    }
    std::vector<std::future<MapResult>> futures;
    futures.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        futures.push_back(std::async(std::launch::async, run_member, i));
    for (std::size_t i = 0; i < n; ++i) members[i] = futures[i].get();
    return members;
}

}  // namespace bnnshift
