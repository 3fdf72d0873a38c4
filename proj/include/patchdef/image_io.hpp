#pragma once

// Lossless 8-bit RGB image export (binary PPM, row-major).

#include <string>

#include "patchdef/tensor.hpp"

namespace patchdef {

// t is (H,W,3) with values in [0,1]; values are clipped and quantized to 8 bits
void write_ppm(const std::string& path, const Tensor<float>& t);

Tensor<float> read_ppm(const std::string& path);

}  // namespace patchdef
