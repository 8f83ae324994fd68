#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace panelfilter {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hash a tuple of integers into a stream key. Order matters.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Domain tags keep streams used for different purposes apart.
namespace stream_tag {
inline constexpr std::uint64_t simulate = 0x51;
inline constexpr std::uint64_t pfilter = 0x52;
inline constexpr std::uint64_t mif = 0x53;
inline constexpr std::uint64_t resample = 0x54;
inline constexpr std::uint64_t starts = 0x55;
inline constexpr std::uint64_t multistart = 0x56;
inline constexpr std::uint64_t optimizer = 0x57;
inline constexpr std::uint64_t evaluation = 0x58;
inline constexpr std::uint64_t initial_swarm = 0x59;
}  // namespace stream_tag

// Counter-based SplitMix64 stream. The i-th output depends only on the key
// and i, so streams can be created per (seed, unit, time, particle) without
// any shared state between workers.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  explicit StreamRng(std::uint64_t key) : state_(splitmix64(key)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

}  // namespace panelfilter
