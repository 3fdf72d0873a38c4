#include "patchdef/scene.hpp"

#include <cmath>
#include <stdexcept>

#include "patchdef/rng.hpp"

namespace patchdef {

namespace {

struct Palette {
  std::array<float, 3> fg, bg;
};

// one shared palette for every class: color statistics carry no label
// information, so recognition has to rest on pattern geometry
const Palette kSharedPalette = {{0.78f, 0.78f, 0.78f}, {0.30f, 0.30f, 0.30f}};

float jitter(float base, Rng& rng, double amount) {
  float v = base + float(rng.uniform(-amount, amount));
  return std::min(1.0f, std::max(0.0f, v));
}

// pattern kinds: 0 horizontal stripes, 1 vertical stripes, 2 checker,
// 3 diagonal stripes, 4 rings, 5 blob grid
bool pattern_fg(int kind, int r, int c, int S, double phase, int period) {
  switch (kind) {
    case 0: return ((r + int(phase * period)) / (period / 2)) % 2 == 0;
    case 1: return ((c + int(phase * period)) / (period / 2)) % 2 == 0;
    case 2: return ((r / (period / 2)) + (c / (period / 2))) % 2 == 0;
    case 3: return ((r + c + int(phase * period)) / (period / 2)) % 2 == 0;
    case 4: {
      double dr = r - S / 2.0, dc = c - S / 2.0;
      double rad = std::sqrt(dr * dr + dc * dc) + phase * period;
      return int(rad / (period / 2)) % 2 == 0;
    }
    default: {
      int g = period;
      double dr = (r + phase * g) - (std::floor((r + phase * g) / g) * g + g / 2.0);
      double dc = double(c % g) - g / 2.0;
      return dr * dr + dc * dc < (g / 3.0) * (g / 3.0);
    }
  }
}

}  // namespace

PatchAnchor default_anchor(int S, double area_frac) {
  int side = std::max(2, int(std::lround(S * std::sqrt(area_frac))));
  side = std::min(side, S);
  PatchAnchor a;
  a.h = a.w = side;
  a.r0 = a.c0 = (S - side) / 2;
  return a;
}

std::vector<Scene> make_dataset(const DatasetOptions& opt, std::uint64_t seed) {
  if (opt.n_classes < 2 || opt.n_classes > 8)
    throw std::invalid_argument("make_dataset: n_classes must be in [2,8]");
  if (opt.per_class < 1) throw std::invalid_argument("make_dataset: per_class < 1");
  const int S = opt.texture_size;
  if (S < 8) throw std::invalid_argument("make_dataset: texture_size too small");

  std::vector<Scene> out;
  out.reserve(std::size_t(opt.n_classes) * opt.per_class);
  for (int cls = 0; cls < opt.n_classes; ++cls) {
    int kind = cls % 6;
    const Palette& pal = kSharedPalette;
    // classes beyond the six pattern kinds reuse them at a coarser repeat
    int period = 6 + 4 * (cls / 6);
    for (int inst = 0; inst < opt.per_class; ++inst) {
      std::uint64_t sseed =
          derive_seed(seed, std::uint64_t(cls) * 1000 + std::uint64_t(inst));
      Rng rng(sseed);
      Scene sc;
      sc.label = cls;
      sc.seed = sseed;
      sc.anchor = default_anchor(S, opt.patch_area_frac);
      sc.texture = Tensor<float>({S, S, 3});
      // small phase range keeps class-mean textures structured
      double phase = rng.uniform(0.0, 0.25);
      std::array<float, 3> fg, bg;
      for (int c = 0; c < 3; ++c) {
        fg[std::size_t(c)] = jitter(pal.fg[std::size_t(c)], rng, 0.08);
        bg[std::size_t(c)] = jitter(pal.bg[std::size_t(c)], rng, 0.08);
      }
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
          const auto& col = pattern_fg(kind, r, c, S, phase, period) ? fg : bg;
          for (int ch = 0; ch < 3; ++ch) sc.texture.at(r, c, ch) = col[std::size_t(ch)];
        }
      out.push_back(std::move(sc));
    }
  }
  return out;
}

Tensor<float> class_mean_texture(const std::vector<Scene>& scenes, int label) {
  Tensor<float> acc;
  int n = 0;
  for (const Scene& s : scenes) {
    if (s.label != label) continue;
    if (n == 0) acc = Tensor<float>::zeros(s.texture.shape);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += s.texture.data[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("class_mean_texture: label absent");
  for (auto& x : acc.data) x /= float(n);
  return acc;
}

}  // namespace patchdef
