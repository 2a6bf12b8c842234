#include "bnnshift/grid.hpp"

#include <cmath>

#include "bnnshift/errors.hpp"

namespace bnnshift {

namespace {

Vector trapezoid_weights(const Vector& axis) {
    const std::size_t n = axis.size();
    if (n < 2) throw ConfigError("grid: each axis needs at least 2 nodes");
    Vector w(n);
    w[0] = 0.5 * (axis[1] - axis[0]);
    for (std::size_t i = 1; i + 1 < n; ++i) w[i] = 0.5 * (axis[i + 1] - axis[i - 1]);
    w[n - 1] = 0.5 * (axis[n - 1] - axis[n - 2]);
    return w;
}

void validate_axes(const std::vector<Vector>& axes) {
    if (axes.empty() || axes.size() > 3)
        throw ConfigError("grid: parameter count must be between 1 and 3");
    for (const auto& a : axes) {
        if (a.size() > 401) throw ConfigError("grid: axis size exceeds 401 nodes");
        for (std::size_t i = 1; i < a.size(); ++i)
            if (a[i] <= a[i - 1]) throw ConfigError("grid: axis nodes must ascend");
    }
}

}  // namespace

GridPosterior grid_posterior_fn(const std::function<double(const Vector&)>& log_unnorm,
                                std::vector<Vector> axes) {
    validate_axes(axes);
    GridPosterior g;
    g.axes = std::move(axes);

    std::size_t total = 1;
    std::vector<std::size_t> sizes;
    for (const auto& a : g.axes) {
        sizes.push_back(a.size());
        total *= a.size();
    }
    g.log_density.resize(total);

    Vector point(g.axes.size());
    std::vector<Vector> weights;
    for (const auto& a : g.axes) weights.push_back(trapezoid_weights(a));

    double max_ld = -std::numeric_limits<double>::infinity();
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (std::size_t k = g.axes.size(); k-- > 0;) {
            point[k] = g.axes[k][rem % sizes[k]];
            rem /= sizes[k];
        }
        g.log_density[flat] = log_unnorm(point);
        max_ld = std::max(max_ld, g.log_density[flat]);
    }
    if (!std::isfinite(max_ld)) throw NumericError("grid: log density has no finite values");

    double z = 0.0;
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        double w = 1.0;
        for (std::size_t k = g.axes.size(); k-- > 0;) {
            w *= weights[k][rem % sizes[k]];
            rem /= sizes[k];
        }
        z += w * std::exp(g.log_density[flat] - max_ld);
    }
    g.log_normalizer = max_ld + std::log(z);
    return g;
}

Vector GridPosterior::marginal(std::size_t axis) const {
    if (axis >= axes.size()) throw ConfigError("grid.marginal: axis out of range");
    std::vector<std::size_t> sizes;
    std::size_t total = 1;
    for (const auto& a : axes) {
        sizes.push_back(a.size());
        total *= a.size();
    }
    std::vector<Vector> weights;
    for (const auto& a : axes) weights.push_back(trapezoid_weights(a));

    Vector m(sizes[axis], 0.0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        double w = 1.0;
        std::size_t axis_idx = 0;
        for (std::size_t k = axes.size(); k-- > 0;) {
            const std::size_t idx = rem % sizes[k];
            rem /= sizes[k];
            if (k == axis)
                axis_idx = idx;
            else
                w *= weights[k][idx];
        }
        m[axis_idx] += w * std::exp(log_density[flat] - log_normalizer);
    }
    return m;
}

double GridPosterior::mean(std::size_t axis) const {
    Vector m = marginal(axis);
    Vector w = trapezoid_weights(axes[axis]);
    double mu = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) mu += w[i] * axes[axis][i] * m[i];
    return mu;
}

GridPosterior grid_posterior(const ModelSpec& spec, const PriorSpec& prior,
                             const LabeledDataset& data, std::vector<Vector> axes,
                             double temperature) {
    ParamVector proto = spec.make_params();
    if (proto.dim() > 3)
        throw ConfigError("grid_posterior: model has more than 3 parameters");
    if (axes.size() != proto.dim())
        throw ShapeError("grid_posterior: axis count must equal parameter count");
    if (temperature <= 0.0) throw ConfigError("grid_posterior: temperature must be positive");

    auto log_unnorm = [&](const Vector& point) {
        ParamVector p = proto;
        p.data = point;
        double lp = prior_logpdf(prior, p);
        if (data.n() > 0) lp += log_likelihood(spec, p, data);
        return lp / temperature;
    };
    return grid_posterior_fn(log_unnorm, std::move(axes));
}

Vector make_axis(double center, double halfwidth, std::size_t count) {
    if (count < 2 || halfwidth <= 0.0) throw ConfigError("make_axis: bad parameters");
    Vector a(count);
    for (std::size_t i = 0; i < count; ++i)
        a[i] = center - halfwidth + 2.0 * halfwidth * i / (count - 1);
    return a;
}

}  // namespace bnnshift
