#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace freqdiff {

// Thrown on malformed caller input (bad shapes, out-of-range knobs, unparsable
// files). CLI layer turns these into machine-readable error JSON.
class invalid_input : public std::runtime_error {
 public:
  explicit invalid_input(const std::string& what) : std::runtime_error(what) {}
};

// Internal contract violations (broken invariants, not caller mistakes).
class internal_error : public std::runtime_error {
 public:
  explicit internal_error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw invalid_input(msg);
}

// FNV-1a over raw bytes; the manifest content-hash primitive. Chaining calls
// by passing a previous result as `basis` hashes a concatenation.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t basis = 14695981039346656037ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::uint64_t parse_hex_u64(const std::string& s) {
  require(s.size() == 16, "hash must be 16 hex digits");
  std::uint64_t v = 0;
  for (char c : s) {
    int nib;
    if (c >= '0' && c <= '9') nib = c - '0';
    else if (c >= 'a' && c <= 'f') nib = c - 'a' + 10;
    else throw invalid_input("hash must be lowercase hex");
    v = (v << 4) | static_cast<std::uint64_t>(nib);
  }
  return v;
}

}  // namespace freqdiff
