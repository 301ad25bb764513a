#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace saferl {

// Counter-based deterministic generator. Every draw is a pure function of
// (seed, stream id, draw index), so runs replay exactly and independent
// streams never interact regardless of call interleaving.
namespace streams {
inline constexpr std::uint64_t env_noise = 0x01;
inline constexpr std::uint64_t env_layout = 0x02;
inline constexpr std::uint64_t obstacle_move = 0x03;
inline constexpr std::uint64_t dropout = 0x04;
inline constexpr std::uint64_t mc_dropout = 0x05;
inline constexpr std::uint64_t bootstrap = 0x06;
inline constexpr std::uint64_t exploration = 0x07;
inline constexpr std::uint64_t init = 0x08;
inline constexpr std::uint64_t replay = 0x09;
inline constexpr std::uint64_t evaluation = 0x0a;
inline constexpr std::uint64_t test = 0x7f;
}  // namespace streams

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(seed ^ 0x9e3779b97f4a7c15ull, stream)) {}

  // Derives a child key so per-instance streams (ensemble member, obstacle
  // index) stay decoupled.
  RngStream child(std::uint64_t sub) const { return RngStream(key_, sub ^ 0xd1b54a32d192ed03ull); }

  std::uint64_t bits() { return mix(key_, counter_++); }

  double uniform() {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_int(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(bits()) * n) >> 64);
  }

  // Box-Muller; consumes two draws per call, no cached second value.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t draws() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t key, std::uint64_t x) {
    // splitmix64 finalizer over the keyed counter
    std::uint64_t z = key + x * 0x9e3779b97f4a7c15ull;
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace saferl
