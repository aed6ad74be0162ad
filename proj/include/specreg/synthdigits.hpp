#pragma once

#include <cstdint>

#include "specreg/data.hpp"

namespace specreg {

/// Deterministic 28x28 ten-class digit-glyph dataset in the MNIST byte/IDX
/// conventions: white strokes on black, values 0-255, labels 0-9 balanced
/// round-robin. Each sample applies a seeded random affine transform
/// (rotation, scale, shear, shift) and stroke width to a fixed per-class
/// glyph, so every class lives on a smooth low-dimensional manifold.
///
/// Stands in for MNIST where the real files are unavailable; the IDX loader
/// accepts either interchangeably.
DatasetHandle make_synthetic_digits(int64_t count, uint64_t seed);

/// Convenience: generate and write an IDX pair.
void write_synthetic_idx(int64_t count, uint64_t seed, const std::string& images_path,
                         const std::string& labels_path);

}  // namespace specreg
