#pragma once

// Differentiable renderer. Each output pixel is inverse-mapped through the
// homography induced by the card plane and the current view, then
// bilinearly sampled from the card texture (with the adversarial patch
// composited into its anchor region when present). Pixels that miss the card
// get the background color. The mapping itself is plain data computed in
// double precision; gradients flow to texture and patch pixels only.

#include <Eigen/Dense>
#include <optional>

#include "patchdef/camera.hpp"
#include "patchdef/graph.hpp"
#include "patchdef/scene.hpp"

namespace patchdef {

struct RenderMapping {
  int res = 0;
  std::vector<double> rows, cols;      // texture coordinates per output pixel
  std::vector<std::uint8_t> valid;     // pixel hits the card with positive depth
  bool degenerate = false;             // card not visible at all
};

// Inverse homography for every output pixel at view state s.
inline RenderMapping compute_mapping(const CardGeometry& card, const CameraState& s,
                                     const Intrinsics& intr, double radius,
                                     int texture_size) {
  RenderMapping m;
  m.res = intr.res;
  std::size_t n = std::size_t(intr.res) * intr.res;
  m.rows.assign(n, 0.0);
  m.cols.assign(n, 0.0);
  m.valid.assign(n, 0);

  Eigen::Matrix3d R = camera_rotation(s);
  Eigen::Vector3d T(0, 0, radius);

  // card corners must have positive depth, else the view is degenerate
  bool any_visible = false;
  for (const auto& c : card.corners())
    if ((R * c + T).z() > 1e-9) any_visible = true;
  if (!any_visible) {
    m.degenerate = true;
    return m;
  }

  // pixel_h = A * (u, v, 1) with A = K [R*U | R*V | R*O + T]
  Eigen::Matrix3d A;
  A.col(0) = R * card.uaxis();
  A.col(1) = R * card.vaxis();
  A.col(2) = R * card.origin() + T;
  A = intr.K() * A;
  if (std::abs(A.determinant()) < 1e-12) {
    m.degenerate = true;
    return m;
  }
  Eigen::Matrix3d Ainv = A.inverse();

  const double smax = double(texture_size - 1);
  for (int py = 0; py < intr.res; ++py)
    for (int px = 0; px < intr.res; ++px) {
      Eigen::Vector3d q(px + 0.5, py + 0.5, 1.0);
      Eigen::Vector3d uvw = Ainv * q;
      // third component is 1/depth up to the homogeneous scale; require > 0
      if (uvw.z() < 1e-12) continue;
      double u = uvw.x() / uvw.z();
      double v = uvw.y() / uvw.z();
      if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
      std::size_t i = std::size_t(py) * intr.res + px;
      m.rows[i] = v * smax;
      m.cols[i] = u * smax;
      m.valid[i] = 1;
    }
  bool any = false;
  for (auto v : m.valid) any |= (v != 0);
  if (!any) m.degenerate = true;  // e.g. edge-on views
  return m;
}

// Renders into the graph: returns an (R,R,3) node. texture is an existing
// graph var (leaf or param); patch, when given, is composited at the anchor.
template <typename T>
Var<T> render([[maybe_unused]] Graph<T>& g, Var<T> texture, const RenderMapping& m,
              const PatchAnchor& anchor, std::optional<Var<T>> patch,
              const std::array<float, 3>& background) {
  Var<T> combined = texture;
  if (patch.has_value())
    combined = overwrite_region(texture, *patch, anchor.r0, anchor.c0);
  std::vector<T> fill{T(background[0]), T(background[1]), T(background[2])};
  Var<T> flat = bilinear_sample(combined, m.rows, m.cols, m.valid, fill);
  return reshape(flat, {m.res, m.res, 3});
}

// Forward-only convenience path (no gradients); same code path as render().
template <typename T>
Tensor<T> render_image(const Scene& scene, const CameraState& s,
                       const Intrinsics& intr, double radius,
                       const Tensor<T>* patch = nullptr) {
  RenderMapping m = compute_mapping(scene.card, s, intr, radius, scene.texture.shape[0]);
  Graph<T> g;
  Var<T> tex = g.value(scene.texture.template cast<T>());
  std::optional<Var<T>> pv;
  if (patch) pv = g.value(*patch);
  Var<T> img = render(g, tex, m, scene.anchor, pv, scene.background);
  return g.val(img);
}

}  // namespace patchdef
