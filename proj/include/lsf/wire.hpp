#pragma once

// Little-endian primitives for the binary file formats (depth maps,
// checkpoints). Streams fail by returning false from the getters; writers
// leave error handling to the caller's stream checks.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace lsf::wire {

inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
      static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  return true;
}

inline void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v & 0xffffffffull));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline bool get_u64(std::istream& is, uint64_t& v) {
  uint32_t lo = 0, hi = 0;
  if (!get_u32(is, lo) || !get_u32(is, hi)) return false;
  v = static_cast<uint64_t>(hi) << 32 | lo;
  return true;
}

inline void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<uint32_t>(v));
}

inline bool get_f32(std::istream& is, float& v) {
  uint32_t bits = 0;
  if (!get_u32(is, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

}  // namespace lsf::wire
