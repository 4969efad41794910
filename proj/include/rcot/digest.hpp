#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace rcot {

// FNV-1a 64-bit. Provenance fingerprints for checkpoints, eval sets, and
// reports; not a cryptographic hash.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

inline std::string digest_hex(std::string_view bytes) { return "fnv1a64:" + to_hex(fnv1a64(bytes)); }

}  // namespace rcot
