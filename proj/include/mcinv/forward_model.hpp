#pragma once

#include <cstdint>
#include <vector>

#include "mcinv/rng.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

// Synthetic measurement generator: an analytic per-population signal, linear
// mixing of population contributions, and Rician noise corruption.

struct Measurement {
  double b_value = 0.0;  // s/mm^2
  Vector3 direction = Vector3::UnitZ();
};

struct Protocol {
  std::vector<Measurement> measurements;

  Index size() const { return static_cast<Index>(measurements.size()); }
  void validate() const;
};

struct PopulationParams {
  Vector3 orientation = Vector3::UnitZ();  // unit vector u
  double radius_um = 1.0;                  // r in [0.5, 5.0]
  double density = 0.5;                    // f in [0, 0.9]

  void validate() const;
};

struct VoxelConfig {
  std::vector<PopulationParams> populations;
  Vector fractions;  // nu, one per population, sums to 1

  void validate() const;
};

struct NoiseSpec {
  double snr = 50.0;  // sigma = 1/snr relative to the unit b=0 amplitude
  std::uint64_t seed = 0;
};

// Diffusivities of the analytic signal model, in mm^2/s.
inline constexpr double kDiffusivityParallel = 2.0e-3;
inline constexpr double kDiffusivityIso = 2.0e-3;

// Perpendicular diffusivity as a function of the radius index r (in um).
inline double perp_diffusivity(double radius_um) {
  return 2.5e-5 * radius_um * radius_um;
}

// Signal of a single population over all protocol measurements:
//   S_i = f exp(-b_i (d_par c_i^2 + d_perp(r) (1 - c_i^2)))
//         + (1 - f) exp(-b_i d_iso),   c_i = direction_i . u.
// S_i = 1 exactly wherever b_i = 0.
Vector signal_population(const PopulationParams& p, const Protocol& proto);

// Weighted mixture sum_k nu_k S_k of the population signals.
Vector mix_signal(const VoxelConfig& cfg, const Protocol& proto);

// y_i = sqrt((S_i + n1_i)^2 + n2_i^2) with n1, n2 ~ N(0, sigma^2),
// sigma = 1/snr. Each measurement consumes one Box-Muller pair in index
// order. snr = inf returns |S| without consuming generator state.
Vector add_rician_noise(const Vector& signal, const NoiseSpec& spec);

// Measurement directions spread by minimizing antipodal electrostatic
// repulsion from a seeded random start; deterministic given (count, seed).
std::vector<Vector3> repulsion_directions(int count, std::uint64_t seed);

// Desk-scale protocol: 4 x b=0, 30 directions at b=1000, 30 at b=3000.
Protocol make_desk_protocol();

// Large named preset for scale benchmarks: 552 measurements
// (40 x b=0 and shells at b = 1000/3000/5000/10000).
Protocol make_paper_scale_protocol();

}  // namespace mcinv
