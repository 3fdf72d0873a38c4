#pragma once

// Bundles the fixed environment pieces (camera intrinsics, mount radius, view
// bounds, per-step action caps) and the initial-state distribution.

#include "patchdef/camera.hpp"
#include "patchdef/rng.hpp"

namespace patchdef {

struct EnvConfig {
  Intrinsics intr;
  double radius = 2.2;
  ViewBounds bounds;
  ActionCaps caps = ActionCaps::from_bounds(ViewBounds{});
};

// initial-state distribution: uniform over the view bounds
inline CameraState random_state(Rng& rng, const ViewBounds& b) {
  return {rng.uniform(b.h_min, b.h_max), rng.uniform(b.v_min, b.v_max)};
}

// i.i.d.-uniform action over the per-step caps
inline Action random_action(Rng& rng, const ActionCaps& caps) {
  return {rng.uniform(-caps.dh_max, caps.dh_max),
          rng.uniform(-caps.dv_max, caps.dv_max)};
}

}  // namespace patchdef
