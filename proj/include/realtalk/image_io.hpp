#pragma once

#include <string>

#include "realtalk/tensor.hpp"

namespace rt::io {

// Frames are CHW float tensors in [0,1]; masks are HW tensors in {0,1}.
// PPM (P6) / PGM (P5) with maxval 255.
void write_ppm(const std::string& path, const Tensor& chw);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& hw);
Tensor read_pgm(const std::string& path);

}  // namespace rt::io
