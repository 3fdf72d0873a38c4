#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "patchdef/checkpoint.hpp"

using namespace patchdef;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

Archive sample_archive() {
  Archive a;
  a.set_meta("format", "test");
  a.set_meta("config_hash", "deadbeef");
  a.arrays.push_back({"layer.w", {2, 3}, {1.5f, -2.25f, 0.125f, 3.0f, -0.5f, 9.75f}});
  a.arrays.push_back({"layer.b", {3}, {0.0f, 1.0f, -1.0f}});
  return a;
}

}  // namespace

TEST_CASE("save/load/save round trip is byte-identical") {
  Archive a = sample_archive();
  save_archive("ck_a.bin", a);
  Archive b = load_archive("ck_a.bin");
  save_archive("ck_b.bin", b);
  CHECK(slurp("ck_a.bin") == slurp("ck_b.bin"));
  REQUIRE(b.arrays.size() == 2);
  CHECK(b.arrays[0].name == "layer.w");
  CHECK(b.arrays[0].shape == std::vector<int>{2, 3});
  CHECK(b.arrays[0].data == a.arrays[0].data);  // bit-exact floats
  CHECK(*b.meta_value("config_hash") == "deadbeef");
  std::remove("ck_a.bin");
  std::remove("ck_b.bin");
}

TEST_CASE("archives from a newer version are rejected explicitly") {
  save_archive("ck_v.bin", sample_archive());
  std::string bytes = slurp("ck_v.bin");
  bytes[8] = 2;  // bump the version field
  std::ofstream("ck_v.bin", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
  CHECK_THROWS_WITH_AS(load_archive("ck_v.bin"), doctest::Contains("newer"), ArchiveError);
  std::remove("ck_v.bin");
}

TEST_CASE("corrupted archives report the failing byte offset") {
  save_archive("ck_t.bin", sample_archive());
  std::string bytes = slurp("ck_t.bin");
  bytes.resize(bytes.size() - 7);  // chop the payload
  std::ofstream("ck_t.bin", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
  CHECK_THROWS_WITH_AS(load_archive("ck_t.bin"), doctest::Contains("byte offset"),
                       ArchiveError);
  std::remove("ck_t.bin");

  std::ofstream("ck_m.bin", std::ios::binary) << "NOTANARCHIVE";
  CHECK_THROWS_AS(load_archive("ck_m.bin"), ArchiveError);
  std::remove("ck_m.bin");
}

TEST_CASE("parameter sets round trip through archives") {
  Rng rng(42);
  Parameter<float> w("m.w", Tensor<float>::uniform({4, 4}, rng, -1, 1));
  Parameter<float> b("m.b", Tensor<float>::uniform({1, 4}, rng, -1, 1));
  ParamSet<float> ps;
  ps.add(w);
  ps.add(b);

  Archive a;
  params_to_archive(ps, a);
  save_archive("ck_p.bin", a);
  Archive loaded = load_archive("ck_p.bin");

  Parameter<float> w2("m.w", Tensor<float>::zeros({4, 4}));
  Parameter<float> b2("m.b", Tensor<float>::zeros({1, 4}));
  ParamSet<float> ps2;
  ps2.add(w2);
  ps2.add(b2);
  params_from_archive(loaded, ps2);
  CHECK(w2.value.data == w.value.data);
  CHECK(b2.value.data == b.value.data);

  // missing parameter
  Parameter<float> extra("m.extra", Tensor<float>::zeros({2}));
  ParamSet<float> ps3;
  ps3.add(extra);
  CHECK_THROWS_WITH_AS(params_from_archive(loaded, ps3), doctest::Contains("missing"),
                       std::runtime_error);

  // shape mismatch
  Parameter<float> wrong("m.w", Tensor<float>::zeros({3, 3}));
  ParamSet<float> ps4;
  ps4.add(wrong);
  CHECK_THROWS_WITH_AS(params_from_archive(loaded, ps4), doctest::Contains("shape"),
                       std::runtime_error);
  std::remove("ck_p.bin");
}

TEST_CASE("duplicate parameter names are rejected") {
  Parameter<float> a("p", Tensor<float>::zeros({1}));
  Parameter<float> b("p", Tensor<float>::zeros({1}));
  ParamSet<float> ps;
  ps.add(a);
  CHECK_THROWS_AS(ps.add(b), std::invalid_argument);
}

TEST_CASE("fnv1a is stable") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("abc") != fnv1a("abd"));
}
