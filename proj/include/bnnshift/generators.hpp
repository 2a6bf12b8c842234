#pragma once

#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"
#include "bnnshift/rng.hpp"

namespace bnnshift {

// Exact dependence planted into every generated input.
struct DependenceSpec {
    enum class Kind { DeadFeature, Affine, PatchAffine, Multiplicative, Spurious };
    Kind kind = Kind::DeadFeature;

    std::size_t dead_index = 0;

    // Affine: stacked constraint rows C (k x m) with offsets c0 (k); a single
    // row is the c.x = c0 hyperplane of the usual statement. Each row is
    // normalized so |(c, c0)| = 1.
    Matrix affine_c;
    Vector affine_c0;

    // PatchAffine: every K x K x C patch z satisfies gamma.z = gamma0.
    Vector patch_gamma;
    double patch_gamma0 = 0.0;
    std::size_t patch_kernel = 3;

    // Multiplicative: prod_j x_j^{p_j} = 1, |p| = 1.
    Vector mult_p;

    // Spurious: feature perfectly correlated with the class label.
    std::size_t spurious_index = 0;
    double spurious_value = 1.0;
};

struct GeneratorConfig {
    std::size_t n = 100;
    std::size_t m = 8;  // flat feature count (ignored for images)
    std::size_t image_h = 0, image_w = 0, channels = 1;
    std::size_t classes = 2;       // > 2 uses an argmax teacher over k directions
    double teacher_margin = 0.3;   // resample until the top-2 teacher gap >= margin
    double teacher_noise = 0.1;    // log-space noise for regression targets
    bool regression = false;       // gaussian targets instead of classes
};

// Synthetic dataset whose inputs satisfy the dependence exactly (residual
// below 1e-12) and whose labels come from a logistic teacher on a direction
// orthogonal to the planted dependence.
LabeledDataset gen_planted(const DependenceSpec& dep, const GeneratorConfig& cfg,
                           RngStream& rng);

// Plain gaussian cloud with a margin-filtered teacher, no planted dependence.
LabeledDataset gen_teacher_cloud(const GeneratorConfig& cfg, RngStream& rng);

// Subtract the per-feature mean in place, updating any recorded affine
// constraint offsets to the centered frame; returns the removed mean.
Vector center_dataset(LabeledDataset& data);

}  // namespace bnnshift
