#pragma once

#include <string>

#include "bnnshift/dataset.hpp"

namespace bnnshift {

// Raw big-endian IDX tensor (magic 0x0000080k for unsigned-byte data).
struct IdxTensor {
    std::vector<std::size_t> dims;
    std::vector<unsigned char> values;
};

IdxTensor load_idx_tensor(const std::string& path);

// Image + label IDX pair into a dataset; pixels scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Per-feature standardization using train statistics only; applied in place
// to train and, with the train statistics, to test.
void normalize_with_train_stats(LabeledDataset& train, LabeledDataset* test);

// Dataset cache: <path>.bin holds the inputs as float64 little-endian,
// <path>.json the shape, targets and provenance metadata.
void save_dataset(const LabeledDataset& data, const std::string& path_prefix);
LabeledDataset load_dataset(const std::string& path_prefix);

}  // namespace bnnshift
