#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "patchdef/scene.hpp"

using namespace patchdef;

TEST_CASE("dataset regeneration is bit-identical for the same seed") {
  DatasetOptions opt;
  auto a = make_dataset(opt, 1234);
  auto b = make_dataset(opt, 1234);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].texture.data == b[i].texture.data);
  }
  auto c = make_dataset(opt, 1235);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    any_diff |= a[i].texture.data != c[i].texture.data;
  CHECK(any_diff);
}

TEST_CASE("dataset has the requested composition and value range") {
  DatasetOptions opt;
  opt.n_classes = 4;
  opt.per_class = 6;
  auto scenes = make_dataset(opt, 7);
  REQUIRE(scenes.size() == 24);
  std::vector<int> counts(4, 0);
  for (const Scene& s : scenes) {
    counts[std::size_t(s.label)]++;
    for (float v : s.texture.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  for (int c : counts) CHECK(c == 6);
}

TEST_CASE("class mean textures are separated in L2") {
  DatasetOptions opt;
  auto scenes = make_dataset(opt, 99);
  for (int a = 0; a < opt.n_classes; ++a)
    for (int b = a + 1; b < opt.n_classes; ++b) {
      Tensor<float> ma = class_mean_texture(scenes, a);
      Tensor<float> mb = class_mean_texture(scenes, b);
      double l2 = 0;
      for (std::size_t i = 0; i < ma.numel(); ++i) {
        double d = double(ma.data[i]) - double(mb.data[i]);
        l2 += d * d;
      }
      CHECK(std::sqrt(l2) > 1.0);  // clear positive margin
    }
}

TEST_CASE("default anchor is a centered square of roughly 10% area") {
  PatchAnchor a = default_anchor(32, 0.10);
  CHECK(a.h == a.w);
  double frac = double(a.h) * a.w / (32.0 * 32.0);
  CHECK(frac > 0.05);
  CHECK(frac < 0.15);
  CHECK(a.r0 == (32 - a.h) / 2);
  CHECK(a.r0 + a.h <= 32);
}

TEST_CASE("instances within a class differ but share the class pattern") {
  DatasetOptions opt;
  auto scenes = make_dataset(opt, 3);
  // two instances of class 0: jittered, so not identical
  CHECK(scenes[0].texture.data != scenes[1].texture.data);
  CHECK(scenes[0].label == scenes[1].label);
}

TEST_CASE("invalid dataset options are rejected") {
  DatasetOptions opt;
  opt.n_classes = 1;
  CHECK_THROWS_AS(make_dataset(opt, 1), std::invalid_argument);
  opt.n_classes = 9;
  CHECK_THROWS_AS(make_dataset(opt, 1), std::invalid_argument);
  opt.n_classes = 4;
  opt.per_class = 0;
  CHECK_THROWS_AS(make_dataset(opt, 1), std::invalid_argument);
}
