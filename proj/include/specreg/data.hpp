#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specreg/tensor.hpp"

namespace specreg {

/// Loaded image/label set. Pixels are kept as the original bytes; tensor
/// accessors scale to [0,1]. Immutable after construction.
struct DatasetHandle {
    int64_t count = 0;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> images;   // count*rows*cols, row-major
    std::vector<uint8_t> labels;   // count, classes 0-9
    std::string fingerprint;       // sha256 hex over image bytes || label bytes
    std::string lineage;           // split provenance, e.g. "train" or "train/subset(1000,7)"

    int64_t pixels() const { return rows * cols; }
    /// (B, rows*cols) batch scaled by 1/255.
    Tensor image_batch(const std::vector<int64_t>& idx) const;
    /// (B, 1, rows, cols) batch for convolutional nets.
    Tensor image_batch_2d(const std::vector<int64_t>& idx) const;
    std::vector<int> label_batch(const std::vector<int64_t>& idx) const;
};

std::string sha256_hex(const uint8_t* data, size_t len);
std::string dataset_fingerprint(const std::vector<uint8_t>& images, const std::vector<uint8_t>& labels);

/// Parse a big-endian IDX image/label pair. Magic 2051 (images), 2049
/// (labels); dimensions from the headers; counts must agree.
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path);

/// Write a handle back out in IDX format (bit-exact round trip).
void save_idx(const DatasetHandle& h, const std::string& images_path, const std::string& labels_path);

/// Deterministic seeded sample of n items without replacement.
DatasetHandle subset(const DatasetHandle& h, int64_t n, uint64_t seed);

struct BatchPlan {
    int64_t batch_size = 0;
    bool drop_last = true;
    // widest regularized layer width when spectral regularization is active,
    // 0 otherwise; batches() enforces batch_size >= ceil(1.5 * width)
    int64_t spectral_widest_layer = 0;
};

/// Seeded shuffled index batches for one epoch. Fixed iteration order given
/// (plan, epoch_seed).
std::vector<std::vector<int64_t>> batches(const DatasetHandle& h, const BatchPlan& plan,
                                          uint64_t epoch_seed);

/// Minimum batch size implied by the 1.5x widest-layer rule.
int64_t min_spectral_batch(int64_t widest_layer);

}  // namespace specreg
