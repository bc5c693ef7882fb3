#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace voxkit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// volume / transform
struct SingularTransform : Error { using Error::Error; };
struct AllZeroVolume : Error { using Error::Error; };

// nn / train
struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateBatch : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };

// dataset
struct ParseError : Error { using Error::Error; };
struct DuplicateId : Error { using Error::Error; };
struct MissingFile : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };

// metrics
struct LengthMismatch : Error { using Error::Error; };
struct SingleClass : Error { using Error::Error; };
struct NoPositives : Error { using Error::Error; };
struct DegenerateInput : Error { using Error::Error; };

// experiment / cli
struct CheckpointMismatch : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct EmptyStore : Error { using Error::Error; };

// Binary I/O is little-endian on disk regardless of host order.
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& is) {
  std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

/// Shortest round-trip decimal form; text tables written with this replay
/// byte-for-byte.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Log level comes from the VOXKIT_LOG environment variable (quiet|info|debug),
// the single environment knob the toolkit consults.
inline int log_level() {
  static int level = [] {
    const char* env = std::getenv("VOXKIT_LOG");
    if (!env) return 1;
    std::string s(env);
    if (s == "quiet") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return level;
}

template <class... Args>
void log_info(const char* fmt, Args... args) {
  if (log_level() >= 1) {
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

template <class... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_level() >= 2) {
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

}  // namespace voxkit
