#pragma once

#include <string>

#include "rmfn/tensor.hpp"

namespace rmfn {

// Minimal MRC2014 reader/writer, mode 2 (32-bit float) only. Data layout is
// [nz, ny, nx] with x fastest, matching Tensor row-major order. Files are
// written little-endian with the standard machine stamp; big-endian files
// are byte-swapped on read.
struct MrcData {
  Tensor values;           // [nz, ny, nx]
  double voxel_size = 1.0; // Angstrom, from cella/mx (isotropic expected)
  bool is_volume = true;   // ispg 1; false marks an image stack (ispg 0)
};

MrcData mrc_read(const std::string& path);
void mrc_write(const std::string& path, const Tensor& values, double voxel_size,
               bool is_volume = true);

}  // namespace rmfn
