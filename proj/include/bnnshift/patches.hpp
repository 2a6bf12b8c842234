#pragma once

#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"

namespace bnnshift {

// Flattened K x K x C patches of a batch of images, one patch per row,
// ordered row-major over (image, y, x); patch entries ordered (ky, kx, c) to
// match the first-layer conv filter layout. With padding on, border patches
// are zero-filled and every image yields H*W patches.
Matrix extract_patches(const Matrix& images, std::size_t h, std::size_t w,
                       std::size_t channels, std::size_t k, bool padding);

Matrix extract_patches(const LabeledDataset& data, std::size_t k, bool padding);

// Images with a margin stripped on every side (image-shaped datasets only).
LabeledDataset crop_images(const LabeledDataset& data, std::size_t margin);

}  // namespace bnnshift
