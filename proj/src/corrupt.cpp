#include "bnnshift/corrupt.hpp"

#include <cmath>

#include "bnnshift/errors.hpp"

namespace bnnshift {

std::string CorruptionSpec::tag() const {
    switch (kind) {
        case Kind::GaussianNoise: return "gaussian_noise";
        case Kind::ConstantShift: return "constant_shift";
        case Kind::PcaDirectionalNoise: return "pca_directional_noise";
        case Kind::Translate: return "translate";
        case Kind::FeatureActivate: return "feature_activate";
    }
    return "unknown";
}

LabeledDataset corrupt(const LabeledDataset& data, const CorruptionSpec& spec,
                       RngStream& rng) {
    if (!std::isfinite(spec.sigma) || !std::isfinite(spec.shift) ||
        !std::isfinite(spec.feature_value))
        throw ConfigError("corrupt: parameters must be finite");

    LabeledDataset out = data;  // labels copied untouched
    out.meta.corruption = spec.tag();
    const std::size_t n = data.n(), d = data.feature_dim();

    switch (spec.kind) {
        case CorruptionSpec::Kind::GaussianNoise:
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    out.inputs(i, j) += spec.sigma * rng.next_gaussian();
            break;

        case CorruptionSpec::Kind::ConstantShift:
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) out.inputs(i, j) += spec.shift;
            break;

        case CorruptionSpec::Kind::PcaDirectionalNoise: {
            if (spec.basis.rows() != d)
                throw ShapeError("corrupt: basis rows must match feature dimension");
            if (spec.component_end > spec.basis.cols() ||
                spec.component_begin >= spec.component_end)
                throw ConfigError("corrupt: bad component range");
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = spec.component_begin; k < spec.component_end; ++k) {
                    const double amp = spec.sigma * rng.next_gaussian();
                    for (std::size_t j = 0; j < d; ++j)
                        out.inputs(i, j) += amp * spec.basis(j, k);
                }
            break;
        }

        case CorruptionSpec::Kind::Translate: {
            if (!data.is_image())
                throw ConfigError("corrupt: translate requires image-shaped data");
            const std::size_t h = data.image_h, w = data.image_w, c = data.channels;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - spec.dy;
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - spec.dx;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            double v = 0.0;
                            if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(w))
                                v = data.inputs(i, (static_cast<std::size_t>(sy) * w +
                                                    static_cast<std::size_t>(sx)) * c + ch);
                            out.inputs(i, (y * w + x) * c + ch) = v;
                        }
                    }
            }
            break;
        }

        case CorruptionSpec::Kind::FeatureActivate:
            if (spec.feature_index >= d)
                throw ConfigError("corrupt: feature index out of range");
            for (std::size_t i = 0; i < n; ++i)
                out.inputs(i, spec.feature_index) = spec.feature_value;
            break;
    }
    return out;
}

}  // namespace bnnshift
