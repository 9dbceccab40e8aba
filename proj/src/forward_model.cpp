#include "mcinv/forward_model.hpp"

#include <cmath>

namespace mcinv {

void Protocol::validate() const {
  require(!measurements.empty(), "protocol: needs at least one measurement");
  bool has_b0 = false;
  for (const auto& m : measurements) {
    require(m.b_value >= 0.0, "protocol: b_value must be >= 0");
    require(std::abs(m.direction.norm() - 1.0) <= 1e-9,
            "protocol: directions must be unit vectors");
    if (m.b_value == 0.0) has_b0 = true;
  }
  require(has_b0, "protocol: needs at least one b=0 measurement");
}

void PopulationParams::validate() const {
  require(std::abs(orientation.norm() - 1.0) <= 1e-9,
          "population: orientation must be a unit vector");
  require(radius_um >= 0.5 && radius_um <= 5.0,
          "population: radius must lie in [0.5, 5.0] um");
  require(density >= 0.0 && density <= 0.9,
          "population: density must lie in [0, 0.9]");
}

void VoxelConfig::validate() const {
  require(!populations.empty(), "voxel: needs at least one population");
  require(fractions.size() == static_cast<Index>(populations.size()),
          "voxel: one fraction per population");
  double total = 0.0;
  for (Index k = 0; k < fractions.size(); ++k) {
    require(fractions[k] >= 0.0, "voxel: fractions must be >= 0");
    total += fractions[k];
  }
  require(std::abs(total - 1.0) <= 1e-9, "voxel: fractions must sum to 1");
  for (const auto& p : populations) p.validate();
}

Vector signal_population(const PopulationParams& p, const Protocol& proto) {
  const Index m = proto.size();
  const double d_perp = perp_diffusivity(p.radius_um);
  Vector signal(m);
  for (Index i = 0; i < m; ++i) {
    const auto& meas = proto.measurements[static_cast<std::size_t>(i)];
    if (meas.b_value == 0.0) {
      signal[i] = 1.0;
      continue;
    }
    const double c = meas.direction.dot(p.orientation);
    const double c2 = c * c;
    const double d_pop = kDiffusivityParallel * c2 + d_perp * (1.0 - c2);
    signal[i] = p.density * std::exp(-meas.b_value * d_pop) +
                (1.0 - p.density) * std::exp(-meas.b_value * kDiffusivityIso);
  }
  return signal;
}

Vector mix_signal(const VoxelConfig& cfg, const Protocol& proto) {
  Vector total = Vector::Zero(proto.size());
  for (std::size_t k = 0; k < cfg.populations.size(); ++k)
    total += cfg.fractions[static_cast<Index>(k)] *
             signal_population(cfg.populations[k], proto);
  return total;
}

Vector add_rician_noise(const Vector& signal, const NoiseSpec& spec) {
  require(spec.snr > 0.0, "noise: snr must be > 0");
  if (std::isinf(spec.snr)) return signal.cwiseAbs();
  const double sigma = 1.0 / spec.snr;
  Rng rng(spec.seed);
  Vector noisy(signal.size());
  for (Index i = 0; i < signal.size(); ++i) {
    double z0, z1;
    rng.gaussian_pair(z0, z1);
    const double re = signal[i] + sigma * z0;
    const double im = sigma * z1;
    noisy[i] = std::sqrt(re * re + im * im);
  }
  return noisy;
}

std::vector<Vector3> repulsion_directions(int count, std::uint64_t seed) {
  require(count >= 1, "repulsion_directions: count must be >= 1");
  Rng rng(seed);
  std::vector<Vector3> dirs(static_cast<std::size_t>(count));
  for (auto& d : dirs) d = rng.unit_vector();

  // Gradient steps on the antipodal Coulomb energy
  // sum_{i<j} 1/||x_i - x_j|| + 1/||x_i + x_j||. Forces are projected onto
  // the tangent plane and each displacement is capped, so clustered starts
  // relax instead of overshooting. Fixed iteration count keeps the layout
  // deterministic.
  const int iterations = 400;
  const double step = 0.02 / static_cast<double>(count);
  const double max_move = 0.05;
  std::vector<Vector3> forces(dirs.size());
  for (int it = 0; it < iterations; ++it) {
    for (auto& f : forces) f.setZero();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      for (std::size_t j = i + 1; j < dirs.size(); ++j) {
        const Vector3 diff = dirs[i] - dirs[j];
        const Vector3 anti = dirs[i] + dirs[j];
        const double dn = std::max(diff.norm(), 1e-3);
        const double an = std::max(anti.norm(), 1e-3);
        // The difference term acts antisymmetrically on the pair, the
        // antipodal term symmetrically (it depends on the pair's sum).
        const Vector3 f_diff = diff / (dn * dn * dn);
        const Vector3 f_anti = anti / (an * an * an);
        forces[i] += f_diff + f_anti;
        forces[j] += f_anti - f_diff;
      }
    }
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      Vector3 move = forces[i] - forces[i].dot(dirs[i]) * dirs[i];
      move *= step;
      const double len = move.norm();
      if (len > max_move) move *= max_move / len;
      dirs[i] = (dirs[i] + move).normalized();
    }
  }
  return dirs;
}

namespace {

void append_shell(Protocol& proto, double b_value, int count,
                  std::uint64_t seed) {
  for (const auto& d : repulsion_directions(count, seed))
    proto.measurements.push_back({b_value, d});
}

}  // namespace

Protocol make_desk_protocol() {
  Protocol proto;
  for (int i = 0; i < 4; ++i) proto.measurements.push_back({0.0, Vector3::UnitZ()});
  append_shell(proto, 1000.0, 30, 0x6d63696e76000001ULL);
  append_shell(proto, 3000.0, 30, 0x6d63696e76000002ULL);
  return proto;
}

Protocol make_paper_scale_protocol() {
  Protocol proto;
  for (int i = 0; i < 40; ++i) proto.measurements.push_back({0.0, Vector3::UnitZ()});
  append_shell(proto, 1000.0, 64, 0x6d63696e76000003ULL);
  append_shell(proto, 3000.0, 64, 0x6d63696e76000004ULL);
  append_shell(proto, 5000.0, 128, 0x6d63696e76000005ULL);
  append_shell(proto, 10000.0, 256, 0x6d63696e76000006ULL);
  return proto;
}

}  // namespace mcinv
