#pragma once

#include <cmath>
#include <cstdint>

#include "mcinv/types.hpp"

namespace mcinv {

// Deterministic random number generation used everywhere in the library.
//
// Every stochastic quantity (noise draws, sampled parameters, dropout masks,
// weight init) is a pure function of a 64-bit seed, so datasets and training
// runs are bit-reproducible from the seeds recorded in output files. The
// exact construction, for reimplementation in other languages:
//
//   * splitmix64: state += 0x9E3779B97F4A7C15; z = state;
//     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//     z = (z ^ (z >> 27)) * 0x94D049BB133111EB;  return z ^ (z >> 31).
//   * xoshiro256++ seeded with four consecutive splitmix64 outputs.
//   * uniform():    (next() >> 11) * 2^-53              in [0, 1)
//   * uniform_pos(): ((next() >> 11) + 1) * 2^-53       in (0, 1]
//   * gaussian_pair(): Box-Muller from one (u1, u2) pair,
//       u1 = uniform_pos(), u2 = uniform(),
//       rho = sqrt(-2 ln u1), z0 = rho cos(2 pi u2), z1 = rho sin(2 pi u2).
//   * unit_vector(): z = 1 - 2 u1, phi = 2 pi u2, s = sqrt(1 - z^2),
//       v = (s cos phi, s sin phi, z).
//   * child_seed(master, k): splitmix64 finalizer applied to
//       master ^ (k + 1) * 0x9E3779B97F4A7C15, used to partition the seed
//       space for parallel per-sample generation.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // One Box-Muller pair; consumes exactly two generator words.
  void gaussian_pair(double& z0, double& z1) {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double rho = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    z0 = rho * std::cos(theta);
    z1 = rho * std::sin(theta);
  }

  // Uniform direction on the unit sphere; consumes two generator words.
  Vector3 unit_vector() {
    const double z = 1.0 - 2.0 * uniform();
    const double phi = 2.0 * kPi * uniform();
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
  }

  static std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t x = master ^ ((index + 1) * 0x9E3779B97F4A7C15ULL);
    return splitmix64_next(x);
  }

  static constexpr double kPi = 3.14159265358979323846;

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace mcinv
