#pragma once

// Named-array archive: little-endian float32 payloads with a version header,
// per-array shape records and a string metadata table. Used for model
// checkpoints, datasets and patch banks. Round trips are bit-exact.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdef/nn.hpp"
#include "patchdef/tensor.hpp"

namespace patchdef {

struct ArchiveError : std::runtime_error {
  std::size_t offset;
  ArchiveError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (at byte offset " + std::to_string(off) + ")"),
        offset(off) {}
};

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Archive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const std::string* meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
      if (k == key) { v = value; return; }
    meta.emplace_back(key, value);
  }
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void save_archive(const std::string& path, const Archive& a);
Archive load_archive(const std::string& path);

// --- ParamSet bridge -------------------------------------------------------

template <typename T>
void params_to_archive(const ParamSet<T>& ps, Archive& a) {
  for (const Parameter<T>* p : ps.all()) {
    NamedArray na;
    na.name = p->name;
    na.shape = p->value.shape;
    na.data.resize(p->value.numel());
    for (std::size_t i = 0; i < na.data.size(); ++i)
      na.data[i] = float(p->value.data[i]);
    a.arrays.push_back(std::move(na));
  }
}

// strict: every parameter must be present with a matching shape
template <typename T>
void params_from_archive(const Archive& a, ParamSet<T>& ps) {
  for (Parameter<T>* p : ps.all()) {
    const NamedArray* na = a.find(p->name);
    if (!na)
      throw std::runtime_error("archive is missing parameter " + p->name);
    if (na->shape != p->value.shape)
      throw std::runtime_error("archive parameter " + p->name + " has shape " +
                               shape_str(na->shape) + ", expected " +
                               shape_str(p->value.shape));
    for (std::size_t i = 0; i < na->data.size(); ++i)
      p->value.data[i] = T(na->data[i]);
  }
}

// FNV-1a over a canonical text, used for config provenance stamps
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace patchdef
