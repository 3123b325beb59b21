#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "motret/common.hpp"

// Explicit little-endian scalar IO so files are identical across hosts.
namespace motret::io {

inline void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }
inline void put_u16(std::ostream& os, uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::ostream& os, uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}
inline void put_u64(std::ostream& os, uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}
inline void put_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint8_t get_u8(std::istream& is, const char* what) {
  const int c = is.get();
  check_data(c != EOF, std::string("unexpected end of file reading ") + what);
  return static_cast<uint8_t>(c);
}
inline uint16_t get_u16(std::istream& is, const char* what) {
  const uint16_t lo = get_u8(is, what);
  const uint16_t hi = get_u8(is, what);
  return static_cast<uint16_t>(lo | (hi << 8));
}
inline uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(get_u8(is, what)) << (8 * i);
  return v;
}
inline float get_f32(std::istream& is, const char* what) {
  const uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
inline uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(get_u8(is, what)) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is, const char* what) {
  const uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
inline std::string get_bytes(std::istream& is, size_t n, const char* what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  check_data(static_cast<size_t>(is.gcount()) == n,
             std::string("unexpected end of file reading ") + what);
  return s;
}

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320), the checksum everyone means.
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline uint32_t crc32(const std::string& s) {
  return crc32(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

}  // namespace motret::io
