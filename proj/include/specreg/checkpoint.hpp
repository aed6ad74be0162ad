#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace specreg {

// Checkpoint container, version 1. Little-endian throughout.
//
//   offset 0   : magic "SPECNET1" (8 bytes)
//   offset 8   : u32 blob_count
//   then per blob, back to back:
//     u32 name_len, name bytes (no terminator),
//     u32 ndim, i64 dims[ndim],
//     f64 data[prod(dims)]
//
// Blobs appear in a fixed order: trainable parameters layer by layer
// (L<i>.W, L<i>.b, L<i>.gamma, L<i>.beta, readout.W, readout.b), then
// running statistics (L<i>.bn.run_mean, L<i>.bn.run_var, L<i>.wh.run_mean,
// L<i>.wh.run_chol, L<i>.wh.init).

struct Blob {
    std::string name;
    std::vector<int64_t> dims;
    std::vector<double> data;
};

void write_blobs(const std::string& path, const std::vector<Blob>& blobs);
std::vector<Blob> read_blobs(const std::string& path);

}  // namespace specreg
