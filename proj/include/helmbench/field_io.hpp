#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "helmbench/grid.hpp"

namespace helm {

// SLW1 raw field format: magic "SLW1", two u32 LE dims (nx, ny), then
// nx*ny f32 LE values, row-major.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {(unsigned char)(x & 0xff), (unsigned char)((x >> 8) & 0xff),
                        (unsigned char)((x >> 16) & 0xff), (unsigned char)((x >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("unexpected end of file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(os, bits);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float x;
  std::memcpy(&x, &bits, 4);
  return x;
}

}  // namespace detail

inline void write_slw1(std::ostream& os, const RealField& f) {
  os.write("SLW1", 4);
  detail::put_u32(os, std::uint32_t(f.nx));
  detail::put_u32(os, std::uint32_t(f.ny));
  for (double x : f.v) detail::put_f32(os, float(x));
}

inline void write_slw1(const std::string& path, const RealField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_slw1(os, f);
}

inline RealField read_slw1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SLW1", 4) != 0) throw std::runtime_error("bad SLW1 magic");
  const int nx = int(detail::get_u32(is));
  const int ny = int(detail::get_u32(is));
  if (nx <= 0 || ny <= 0 || std::size_t(nx) * ny > (1u << 28))
    throw std::runtime_error("bad SLW1 dims");
  RealField f(nx, ny);
  for (auto& x : f.v) x = double(detail::get_f32(is));
  return f;
}

inline RealField read_slw1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_slw1(is);
}

}  // namespace helm
