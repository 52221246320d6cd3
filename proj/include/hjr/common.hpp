#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hjr {

/// Raised when a computation produces non-finite numbers. `index()` points at
/// the offending sample or parameter when known, -1 otherwise.
class NumericalFault : public std::runtime_error {
 public:
  explicit NumericalFault(const std::string& msg, std::ptrdiff_t index = -1)
      : std::runtime_error(msg), index_(index) {}
  std::ptrdiff_t index() const { return index_; }

 private:
  std::ptrdiff_t index_;
};

// Deterministic splitmix64 stream. Used everywhere randomness is needed so
// results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Derives an independent stream from (seed, a, b).
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    Rng mix(seed);
    mix.state_ ^= 0xd1b54a32d192ed03ull * (a + 1);
    mix.next_u64();
    mix.state_ ^= 0x8cb92ba72f3d8dd7ull * (b + 1);
    mix.next_u64();
    return mix;
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Wraps a coordinate into [lo, lo + width).
inline double wrap_periodic(double x, double lo, double width) {
  double y = std::fmod(x - lo, width);
  if (y < 0.0) y += width;
  if (y >= width) y -= width;  // fmod rounding can land exactly on width
  return lo + y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace hjr
