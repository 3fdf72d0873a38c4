#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "patchdef/camera.hpp"
#include "patchdef/rng.hpp"

using namespace patchdef;

TEST_CASE("zero-angle rotations are identity") {
  CHECK(rotation_yaw(0.0).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK(rotation_pitch(0.0).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
}

TEST_CASE("yaw by pi/2 maps +z to +x") {
  Eigen::Vector3d out = rotation_yaw(M_PI / 2) * Eigen::Vector3d(0, 0, 1);
  CHECK(out.isApprox(Eigen::Vector3d(1, 0, 0), 1e-12));
}

TEST_CASE("pitch by pi/2 maps +y to +z") {
  Eigen::Vector3d out = rotation_pitch(M_PI / 2) * Eigen::Vector3d(0, 1, 0);
  CHECK(out.isApprox(Eigen::Vector3d(0, 0, 1), 1e-12));
}

TEST_CASE("rotations are orthonormal with unit determinant") {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    CameraState s{rng.uniform(-3.1, 3.1), rng.uniform(-3.1, 3.1)};
    Eigen::Matrix3d R = camera_rotation(s);
    CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("composed rotation matches independently written matrices") {
  // independent oracle: matrices written entry by entry
  Rng rng(78);
  for (int i = 0; i < 1000; ++i) {
    double h = rng.uniform(-3.1, 3.1), v = rng.uniform(-3.1, 3.1);
    Eigen::Matrix3d ry, rx;
    ry << std::cos(h), 0.0, std::sin(h),
          0.0, 1.0, 0.0,
          -std::sin(h), 0.0, std::cos(h);
    rx << 1.0, 0.0, 0.0,
          0.0, std::cos(v), -std::sin(v),
          0.0, std::sin(v), std::cos(v);
    Eigen::Matrix3d want = ry * rx;
    Eigen::Matrix3d got = camera_rotation({h, v});
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("extrinsic layout is [[R,T],[0,1]]") {
  CameraState s{0.2, -0.1};
  Eigen::Matrix4d E = extrinsic(s, 2.2);
  CHECK(E.block<3, 3>(0, 0).isApprox(camera_rotation(s), 1e-15));
  CHECK(E(0, 3) == 0.0);
  CHECK(E(1, 3) == 0.0);
  CHECK(E(2, 3) == 2.2);
  CHECK(E.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1), 1e-15));
}

TEST_CASE("world origin projects to the principal point at every state") {
  Intrinsics intr;
  Rng rng(79);
  for (int i = 0; i < 200; ++i) {
    CameraState s{rng.uniform(-0.35, 0.35), rng.uniform(-0.25, 0.25)};
    Projected p = project(Eigen::Vector3d::Zero(), extrinsic(s, 2.2), intr.K());
    CHECK(p.visible);
    CHECK(p.px.x() == doctest::Approx(intr.cx).epsilon(1e-9));
    CHECK(p.px.y() == doctest::Approx(intr.cy).epsilon(1e-9));
  }
}

TEST_CASE("projection matches the pinhole formula") {
  Intrinsics intr;
  CameraState s{0.15, -0.08};
  Eigen::Matrix4d E = extrinsic(s, 2.2);
  Rng rng(80);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d w(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0);
    Eigen::Vector3d cam = camera_rotation(s) * w + Eigen::Vector3d(0, 0, 2.2);
    Projected p = project(w, E, intr.K());
    CHECK(p.visible);
    CHECK(p.depth == doctest::Approx(cam.z()).epsilon(1e-12));
    CHECK(p.px.x() == doctest::Approx(intr.fx * cam.x() / cam.z() + intr.cx).epsilon(1e-9));
    CHECK(p.px.y() == doctest::Approx(intr.fy * cam.y() / cam.z() + intr.cy).epsilon(1e-9));
  }
}

TEST_CASE("points behind the camera are flagged invisible") {
  Intrinsics intr;
  Projected p = project(Eigen::Vector3d(0, 0, -5.0), extrinsic({0, 0}, 2.2), intr.K());
  CHECK_FALSE(p.visible);
}

TEST_CASE("transition adds and clamps to bounds") {
  ViewBounds b;
  CameraState s{0.3, 0.2};
  CameraState out = transition(s, {0.1, 0.1}, b);
  CHECK(out.h == doctest::Approx(0.35));
  CHECK(out.v == doctest::Approx(0.25));
  CameraState mid = transition({0.0, 0.0}, {0.1, -0.05}, b);
  CHECK(mid.h == doctest::Approx(0.1));
  CHECK(mid.v == doctest::Approx(-0.05));
  CameraState same = transition(s, {0.0, 0.0}, b);
  CHECK(same.h == s.h);
  CHECK(same.v == s.v);
}

TEST_CASE("action caps default to a quarter of the state range") {
  ViewBounds b;
  ActionCaps caps = ActionCaps::from_bounds(b);
  CHECK(caps.dh_max == doctest::Approx(0.25 * 0.7));
  CHECK(caps.dv_max == doctest::Approx(0.25 * 0.5));
  Action a = clamp_action({1.0, -1.0}, caps);
  CHECK(a.dh == doctest::Approx(caps.dh_max));
  CHECK(a.dv == doctest::Approx(-caps.dv_max));
}
