#include "patchdef/image_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace patchdef {

void write_ppm(const std::string& path, const Tensor<float>& t) {
  if (t.ndim() != 3 || t.shape[2] != 3)
    throw std::invalid_argument("write_ppm: expected (H,W,3), got " + shape_str(t.shape));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << t.shape[1] << " " << t.shape[0] << "\n255\n";
  for (float v : t.data) {
    float c = std::min(1.0f, std::max(0.0f, v));
    f.put(char(std::lround(c * 255.0f)));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  if (magic != "P6" || maxv != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after header
  Tensor<float> t({h, w, 3});
  for (auto& v : t.data) {
    int c = f.get();
    if (c < 0) throw std::runtime_error("read_ppm: truncated file " + path);
    v = float(c) / 255.0f;
  }
  return t;
}

}  // namespace patchdef
