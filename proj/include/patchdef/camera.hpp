#pragma once

// View geometry. The camera sits on a fixed-radius mount and always faces the
// world origin; a state is the (yaw, pitch) pair and an action a bounded
// increment. Extrinsics follow the yaw-then-pitch convention
// R = R_y(h) * R_x(v), world-to-camera, with translation (0,0,radius) so the
// origin stays on the optical axis.

#include <Eigen/Dense>

namespace patchdef {

struct ViewBounds {
  double h_min = -0.35, h_max = 0.35;
  double v_min = -0.25, v_max = 0.25;
};

struct CameraState {
  double h = 0.0;  // yaw, radians
  double v = 0.0;  // pitch, radians
};

struct Action {
  double dh = 0.0;
  double dv = 0.0;
};

// per-step caps on action magnitude (defaults: 25% of the state range)
struct ActionCaps {
  double dh_max = 0.25 * 0.7;
  double dv_max = 0.25 * 0.5;
  static ActionCaps from_bounds(const ViewBounds& b, double frac = 0.25) {
    return {frac * (b.h_max - b.h_min), frac * (b.v_max - b.v_min)};
  }
};

struct Intrinsics {
  double fx = 44.8, fy = 44.8;
  double cx = 16.0, cy = 16.0;
  int res = 32;  // square image, res x res
  Eigen::Matrix3d K() const;
};

struct Projected {
  Eigen::Vector2d px;   // pixel coordinates (col, row)
  double depth = 0.0;   // camera-frame z
  bool visible = false; // positive depth
};

Eigen::Matrix3d rotation_yaw(double h);
Eigen::Matrix3d rotation_pitch(double v);
Eigen::Matrix3d camera_rotation(const CameraState& s);

// 4x4 world-to-camera transform [[R, T], [0, 1]] with T = (0, 0, radius)
Eigen::Matrix4d extrinsic(const CameraState& s, double radius);

// full 3D->2D map [[K,0],[0,1]] * E with perspective division
Projected project(const Eigen::Vector3d& world, const Eigen::Matrix4d& E,
                  const Eigen::Matrix3d& K);

CameraState clamp_state(const CameraState& s, const ViewBounds& b);
Action clamp_action(const Action& a, const ActionCaps& caps);

// s' = clamp(s + a); actions are applied as-is (caller clamps to caps first)
CameraState transition(const CameraState& s, const Action& a, const ViewBounds& b);

}  // namespace patchdef
