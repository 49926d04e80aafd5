#pragma once

// Seeded random streams. Every stream is a pure function of
// (base_seed, repeat, reach, purpose), so any repeat or reach can be
// replayed in isolation and repeats can run in any order.

#include "bcisim/types.hpp"

#include <cstdint>
#include <random>

namespace bcisim {

enum class Purpose : std::uint64_t {
  encoder = 1,
  calibration = 2,
  goal = 3,
  neural = 4,
  assist = 5,
  mismatch = 6,
  stream = 7,
};

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

struct StreamKey {
  std::uint64_t base_seed = 0;
  std::uint64_t repeat = 0;
  std::uint64_t reach = 0;
  Purpose purpose = Purpose::encoder;
};

inline Rng make_stream(const StreamKey& key) {
  std::uint64_t h = detail::splitmix64(key.base_seed);
  h = detail::splitmix64(h ^ key.repeat);
  h = detail::splitmix64(h ^ (key.reach * 0x100000001b3ULL));
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(key.purpose));
  return Rng(h);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

inline Vector normal_vector(Rng& rng, Eigen::Index n, double sigma = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = sigma * standard_normal(rng);
  return v;
}

/// Uniform direction on the unit sphere (normalized Gaussian). In one
/// dimension this is +1 or -1 with equal probability.
inline Vector random_unit_vector(Rng& rng, Eigen::Index n) {
  for (;;) {
    Vector v = normal_vector(rng, n);
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

}  // namespace bcisim
