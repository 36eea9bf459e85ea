// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bts {

// Occupancy cases: 1 empty, 2 room A, 3 room B, 4 both rooms.
inline constexpr int kNumCases = 4;

enum class ErrorKind { usage, data, numerical };

/// Exception carrying a category so the CLI can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void check_case(int c) {
  if (c < 1 || c > kNumCases) {
    throw Error(ErrorKind::usage, "invalid case id " + std::to_string(c) +
                                      " (expected 1.." +
                                      std::to_string(kNumCases) + ")");
  }
}

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

/// Dense row-major 3-D array, used for (T, S, K) CSI blocks and (tau, S, K)
/// frames.
template <typename T>
struct Array3 {
  std::size_t d0 = 0, d1 = 0, d2 = 0;
  std::vector<T> data;

  Array3() = default;
  Array3(std::size_t a, std::size_t b, std::size_t c, T fill = T(0))
      : d0(a), d1(b), d2(c), data(a * b * c, fill) {}

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * d1 + j) * d2 + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * d1 + j) * d2 + k];
  }
  std::size_t size() const { return data.size(); }
  std::span<const T> slab(std::size_t i0, std::size_t n) const {
    return {data.data() + i0 * d1 * d2, n * d1 * d2};
  }
  bool operator==(const Array3&) const = default;
};

/// Deterministic random source. The engine is bit-specified by the standard;
/// distribution transforms are written out so streams do not depend on the
/// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }
  /// Independent child stream keyed by `tag`; does not advance this stream.
  Rng fork(std::uint64_t tag) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
    std::mt19937_64 e(seq);
    return Rng(e());
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bts
