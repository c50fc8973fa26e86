#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gff/tensor.hpp"

namespace gff {

static_assert(std::endian::native == std::endian::little,
              "tensor dumps are little-endian; big-endian hosts are unsupported");

namespace detail {

inline void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& f, void* p, std::size_t n, const std::string& what) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw IoError("truncated tensor file while reading " + what);
}

inline void write_u32(std::ofstream& f, std::uint32_t v) { write_bytes(f, &v, 4); }

inline std::uint32_t read_u32(std::ifstream& f, const std::string& what) {
  std::uint32_t v = 0;
  read_bytes(f, &v, 4, what);
  return v;
}

}  // namespace detail

/// Tensor dump format: magic "GFFT", u32 version (1), u8 dtype (0 = 32-bit
/// float, 1 = 64-bit float), u32 ndim, ndim×u32 extents, then the payload
/// row-major, all little-endian. Round-trips are bit-exact.
template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  check(t.defined(), "write_tensor: undefined tensor");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  detail::write_bytes(f, "GFFT", 4);
  detail::write_u32(f, 1u);
  const std::uint8_t dtype = static_cast<std::uint8_t>(precision_of<T>());
  detail::write_bytes(f, &dtype, 1);
  detail::write_u32(f, static_cast<std::uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) detail::write_u32(f, static_cast<std::uint32_t>(t.dim(i)));
  detail::write_bytes(f, t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T));
  if (!f) throw IoError("write failed: " + path.string());
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  char magic[4];
  detail::read_bytes(f, magic, 4, "magic");
  if (std::memcmp(magic, "GFFT", 4) != 0)
    throw IoError("bad magic in " + path.string() + " (not a tensor dump)");
  const std::uint32_t version = detail::read_u32(f, "version");
  if (version != 1u)
    throw IoError("unsupported tensor dump version " + std::to_string(version) + " in " +
                  path.string());
  std::uint8_t dtype = 0;
  detail::read_bytes(f, &dtype, 1, "dtype");
  if (dtype != static_cast<std::uint8_t>(precision_of<T>()))
    throw IoError("dtype mismatch in " + path.string() + ": file has " +
                  (dtype == 0 ? std::string("f32") : dtype == 1 ? std::string("f64")
                                                                : std::to_string(dtype)) +
                  ", caller expects " + (sizeof(T) == 4 ? "f32" : "f64"));
  const std::uint32_t ndim = detail::read_u32(f, "ndim");
  check(ndim >= 1 && ndim <= 8, "implausible tensor rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& e : shape) e = static_cast<std::int64_t>(detail::read_u32(f, "extent"));
  Tensor<T> t(shape);
  detail::read_bytes(f, t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T), "payload");
  return t;
}

struct PgmImage {
  std::int64_t w = 0, h = 0;
  std::vector<std::uint8_t> pix;  // row-major, h*w bytes
};

/// Binary PGM (P5), maxval 255.
inline void write_pgm(const std::filesystem::path& path, std::int64_t w, std::int64_t h,
                      const std::vector<std::uint8_t>& pix) {
  check(static_cast<std::int64_t>(pix.size()) == w * h, "write_pgm: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "P5\n" << w << " " << h << "\n255\n";
  detail::write_bytes(f, pix.data(), pix.size());
  if (!f) throw IoError("write failed: " + path.string());
}

inline PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  auto next_token = [&f, &path]() {
    std::string tok;
    while (true) {
      const int c = f.get();
      if (c == EOF) {
        if (tok.empty()) throw IoError("truncated PGM header in " + path.string());
        return tok;
      }
      if (c == '#') {
        std::string line;
        std::getline(f, line);
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  };
  if (next_token() != "P5") throw IoError("not a binary PGM: " + path.string());
  PgmImage img;
  img.w = std::stoll(next_token());
  img.h = std::stoll(next_token());
  const long long maxval = std::stoll(next_token());
  if (img.w <= 0 || img.h <= 0 || maxval != 255)
    throw IoError("unsupported PGM geometry in " + path.string());
  img.pix.resize(static_cast<std::size_t>(img.w * img.h));
  f.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pix.size()))
    throw IoError("truncated PGM payload in " + path.string());
  return img;
}

}  // namespace gff
