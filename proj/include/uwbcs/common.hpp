#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace uwbcs {

using Index = Eigen::Index;

/// Propagation speed in millimetres per second.
inline constexpr double kSpeedOfLightMmPerS = 2.99792458e11;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Sentinel SNR meaning "do not add noise".
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument or configuration value failed.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A factorization or iteration broke down numerically.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

// splitmix64 finalizer
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed and a list of
/// indices: seed_k = mix64(seed_{k-1} ^ mix64(index_k)). Order matters.
template <typename... Ints>
constexpr std::uint64_t derive_seed(std::uint64_t master, Ints... indices) {
  std::uint64_t s = mix64(master);
  ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(indices) + 0x632be59bd9b4e019ULL))), ...);
  return s;
}

}  // namespace uwbcs
