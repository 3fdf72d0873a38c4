#include "patchdef/camera.hpp"

#include <algorithm>
#include <cmath>

namespace patchdef {

Eigen::Matrix3d Intrinsics::K() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Eigen::Matrix3d rotation_yaw(double h) {
  Eigen::Matrix3d r;
  r << std::cos(h), 0, std::sin(h),
       0, 1, 0,
       -std::sin(h), 0, std::cos(h);
  return r;
}

Eigen::Matrix3d rotation_pitch(double v) {
  Eigen::Matrix3d r;
  r << 1, 0, 0,
       0, std::cos(v), -std::sin(v),
       0, std::sin(v), std::cos(v);
  return r;
}

Eigen::Matrix3d camera_rotation(const CameraState& s) {
  return rotation_yaw(s.h) * rotation_pitch(s.v);
}

Eigen::Matrix4d extrinsic(const CameraState& s, double radius) {
  Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
  e.block<3, 3>(0, 0) = camera_rotation(s);
  e(2, 3) = radius;
  return e;
}

Projected project(const Eigen::Vector3d& world, const Eigen::Matrix4d& E,
                  const Eigen::Matrix3d& K) {
  Eigen::Vector4d cam = E * world.homogeneous();
  Projected out;
  out.depth = cam.z();
  out.visible = cam.z() > 1e-9;
  if (out.visible) {
    Eigen::Vector3d h = K * cam.head<3>();
    out.px = h.head<2>() / h.z();
  } else {
    out.px.setZero();
  }
  return out;
}

CameraState clamp_state(const CameraState& s, const ViewBounds& b) {
  return {std::clamp(s.h, b.h_min, b.h_max), std::clamp(s.v, b.v_min, b.v_max)};
}

Action clamp_action(const Action& a, const ActionCaps& caps) {
  return {std::clamp(a.dh, -caps.dh_max, caps.dh_max),
          std::clamp(a.dv, -caps.dv_max, caps.dv_max)};
}

CameraState transition(const CameraState& s, const Action& a, const ViewBounds& b) {
  return clamp_state({s.h + a.dh, s.v + a.dv}, b);
}

}  // namespace patchdef
