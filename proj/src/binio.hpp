// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitives for the binary feature and checkpoint formats.
// Byte order is explicit so files are portable across hosts.
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "imram/tensor.hpp"

namespace imram::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Reads exactly n bytes or throws FormatError naming the offset reached.
inline void read_exact(std::istream& in, char* dst, std::size_t n, std::uint64_t offset,
                       const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("truncated file: expected ") + std::to_string(n) +
                      " bytes for " + what + " at offset " + std::to_string(offset) + ", got " +
                      std::to_string(in.gcount()));
  }
}

inline std::uint32_t get_u32(std::istream& in, std::uint64_t& offset, const char* what) {
  unsigned char bytes[4];
  read_exact(in, reinterpret_cast<char*>(bytes), 4, offset, what);
  offset += 4;
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in, std::uint64_t& offset, const char* what) {
  const std::uint64_t lo = get_u32(in, offset, what);
  const std::uint64_t hi = get_u32(in, offset, what);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& in, std::uint64_t& offset, const char* what) {
  return std::bit_cast<float>(get_u32(in, offset, what));
}

inline double get_f64(std::istream& in, std::uint64_t& offset, const char* what) {
  return std::bit_cast<double>(get_u64(in, offset, what));
}

}  // namespace imram::binio
