#pragma once

#include <string>

#include "mavlkit/tensor.hpp"

namespace mavlkit {

// Binary 8-bit PGM (P5, maxval 255). Tensors are [H,W] with values in
// [0,255]; writing rounds to the nearest integer and clamps.
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace mavlkit
