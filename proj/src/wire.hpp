#pragma once

// Little-endian stream helpers shared by the binary file formats.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "sparsehead/errors.hpp"

namespace sparsehead::wire {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v = 0;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw FormatError(std::string(what) + ": truncated file");
  return static_cast<std::uint16_t>(b[0] | b[1] << 8);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string(what) + ": truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError(std::string(what) + ": truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  const std::uint64_t v = get_u64(is, what);
  double d = 0.0;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace sparsehead::wire
