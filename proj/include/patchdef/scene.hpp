#pragma once

// Scenes: a textured square card at the world origin plus a class label.
// Textures are procedural, class-distinctive patterns with per-instance
// jitter, so datasets regenerate bit-identically from a seed.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "patchdef/tensor.hpp"

namespace patchdef {

struct PatchAnchor {
  int r0 = 0, c0 = 0;  // top-left texel of the patch region
  int h = 0, w = 0;    // region extent in texels == patch pixel dims
};

struct CardGeometry {
  double half = 0.5;  // card spans [-half, half]^2 in the z=0 plane
  // texture (u,v) in [0,1]^2 -> world point origin() + u*uaxis() + v*vaxis()
  Eigen::Vector3d origin() const { return {-half, -half, 0.0}; }
  Eigen::Vector3d uaxis() const { return {2.0 * half, 0.0, 0.0}; }
  Eigen::Vector3d vaxis() const { return {0.0, 2.0 * half, 0.0}; }
  std::vector<Eigen::Vector3d> corners() const {
    return {origin(), origin() + uaxis(), origin() + uaxis() + vaxis(),
            origin() + vaxis()};
  }
};

struct Scene {
  Tensor<float> texture;  // (S,S,3), values in [0,1]
  int label = 0;
  CardGeometry card;
  PatchAnchor anchor;
  std::array<float, 3> background{0.10f, 0.11f, 0.13f};
  std::uint64_t seed = 0;  // instance seed, for provenance
};

struct DatasetOptions {
  int n_classes = 4;
  int per_class = 6;
  int texture_size = 32;
  double patch_area_frac = 0.10;  // anchor area as a fraction of the texture
};

// anchor: centered square with side ~ S * sqrt(area_frac)
PatchAnchor default_anchor(int S, double area_frac);

std::vector<Scene> make_dataset(const DatasetOptions& opt, std::uint64_t seed);

// mean texture of one class across its instances (used by separation checks)
Tensor<float> class_mean_texture(const std::vector<Scene>& scenes, int label);

}  // namespace patchdef
