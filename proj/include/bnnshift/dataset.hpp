#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "bnnshift/matrix.hpp"

namespace bnnshift {

// Provenance of a generated dataset: which dependence was planted and which
// corruption (if any) was applied.
struct DatasetMeta {
    std::string dependence_kind;  // "", "dead_feature", "affine", "patch_affine",
                                  // "multiplicative", "spurious"
    std::size_t dead_index = std::numeric_limits<std::size_t>::max();
    Matrix constraints;           // stacked constraint rows (c or flattened gamma)
    Vector constraint_offsets;    // c0 / gamma0 per constraint row
    Vector multiplicative_p;
    std::size_t spurious_index = std::numeric_limits<std::size_t>::max();
    double spurious_value = 0.0;
    Vector teacher_direction;
    std::string corruption;       // tag of the last corruption applied, "" if clean
};

struct LabeledDataset {
    Matrix inputs;                // n x m; images stored flattened row-major (y, x, c)
    std::size_t image_h = 0, image_w = 0, channels = 1;  // image_h == 0 means flat
    std::vector<int> targets_class;  // categorical targets
    Vector targets_value;            // gaussian targets
    DatasetMeta meta;

    std::size_t n() const { return inputs.rows(); }
    std::size_t feature_dim() const { return inputs.cols(); }
    bool is_image() const { return image_h > 0; }
    bool has_class_targets() const { return !targets_class.empty(); }
};

}  // namespace bnnshift
