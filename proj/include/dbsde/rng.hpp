#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace dbsde {

/// Counter-based random numbers. Every draw is a pure function of
/// (seed, stream, index), so paths can be generated in any order or on any
/// thread and still come out identical.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Derive a stream id from up to three coordinates (domain tag, batch, path, ...).
  static constexpr std::uint64_t stream(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return mix(mix(mix(a) ^ b) ^ c);
  }

  std::uint64_t bits(std::uint64_t stream_id, std::uint64_t index) const {
    return mix(mix(key_ ^ stream_id) ^ index);
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t stream_id, std::uint64_t index) const {
    return (static_cast<double>(bits(stream_id, index) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Two independent standard normals (Box-Muller) for normal indices
  /// 2k and 2k + 1.
  std::pair<double, double> normal_pair(std::uint64_t stream_id, std::uint64_t k) const {
    const double radius = std::sqrt(-2.0 * std::log(uniform(stream_id, 2 * k)));
    const double angle = 2.0 * std::numbers::pi * uniform(stream_id, 2 * k + 1);
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  double normal(std::uint64_t stream_id, std::uint64_t index) const {
    const auto [a, b] = normal_pair(stream_id, index / 2);
    return index % 2 == 0 ? a : b;
  }

 private:
  std::uint64_t key_;
};

}  // namespace dbsde
