#include "patchdef/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace patchdef {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'A', 'R', 'C', 'H', 'I', 'V'};

static_assert(std::endian::native == std::endian::little,
              "archive writer assumes a little-endian host");

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, std::uint32_t(s.size()));
  buf.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw ArchiveError(std::string("archive truncated while reading ") + what, pos);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    if (n > (1u << 20)) throw ArchiveError(std::string("implausible string length for ") + what, pos - 4);
    need(n, what);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_archive(const std::string& path, const Archive& a) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, kArchiveVersion);
  put_u32(buf, std::uint32_t(a.meta.size()));
  for (const auto& [k, v] : a.meta) {
    put_str(buf, k);
    put_str(buf, v);
  }
  put_u32(buf, std::uint32_t(a.arrays.size()));
  for (const NamedArray& na : a.arrays) {
    put_str(buf, na.name);
    put_u32(buf, std::uint32_t(na.shape.size()));
    std::size_t numel = 1;
    for (int d : na.shape) {
      put_u32(buf, std::uint32_t(d));
      numel *= std::size_t(d);
    }
    if (numel != na.data.size())
      throw std::runtime_error("save_archive: array " + na.name +
                               " data does not match its shape");
    std::size_t off = buf.size();
    buf.resize(off + 4 * na.data.size());
    std::memcpy(buf.data() + off, na.data.data(), 4 * na.data.size());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_archive: cannot open " + path);
  f.write(buf.data(), std::streamsize(buf.size()));
  if (!f) throw std::runtime_error("save_archive: write failed for " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_archive: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  r.need(8, "magic");
  if (std::memcmp(buf.data(), kMagic, 8) != 0)
    throw ArchiveError("bad magic, not an archive", 0);
  r.pos = 8;
  std::uint32_t version = r.u32("version");
  if (version > kArchiveVersion)
    throw ArchiveError("archive version " + std::to_string(version) +
                           " is newer than supported version " +
                           std::to_string(kArchiveVersion),
                       8);

  Archive a;
  std::uint32_t n_meta = r.u32("meta count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str("meta key");
    std::string v = r.str("meta value");
    a.meta.emplace_back(std::move(k), std::move(v));
  }
  std::uint32_t n_arrays = r.u32("array count");
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray na;
    na.name = r.str("array name");
    std::uint32_t ndim = r.u32("array rank");
    if (ndim > 8) throw ArchiveError("implausible rank for array " + na.name, r.pos - 4);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t dim = r.u32("array dim");
      na.shape.push_back(int(dim));
      numel *= dim;
    }
    r.need(4 * numel, ("payload of array " + na.name).c_str());
    na.data.resize(numel);
    std::memcpy(na.data.data(), buf.data() + r.pos, 4 * numel);
    r.pos += 4 * numel;
    a.arrays.push_back(std::move(na));
  }
  if (r.pos != buf.size())
    throw ArchiveError("trailing bytes after archive payload", r.pos);
  return a;
}

}  // namespace patchdef
