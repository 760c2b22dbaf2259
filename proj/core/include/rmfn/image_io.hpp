#pragma once

#include <string>

#include "rmfn/tensor.hpp"

namespace rmfn {

// Reads an 8-bit PNG as [H, W, C] doubles in [0, 1]; C is 1 for grayscale
// sources and 3 otherwise. Alpha is composited onto white.
Tensor load_png(const std::string& path);

// Writes [H, W] or [H, W, C] (C in {1, 3}) as an 8-bit PNG; values are
// clamped to [0, 1] and rounded.
void save_png(const std::string& path, const Tensor& image);

// Log-scaled grayscale heat map of a magnitude spectrum [H, W].
void save_spectrum_png(const std::string& path, const Tensor& magnitude);

// {"shape": [...], "data": [...]} with full double precision.
void save_tensor_json(const std::string& path, const Tensor& t);
Tensor load_tensor_json(const std::string& path);

}  // namespace rmfn
