#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mcinv/fingerprinting.hpp"
#include "oracles.hpp"

using namespace mcinv;
using namespace mcinv::testing;

namespace {

Dictionary two_block_dictionary(const ParamGrid& grid, double degrees) {
  const Protocol proto = make_desk_protocol();
  const Vector3 u1 = Vector3::UnitZ();
  const double rad = degrees * Rng::kPi / 180.0;
  const Vector3 u2(std::sin(rad), 0.0, std::cos(rad));
  return assemble_dictionary({build_subdictionary(grid, u1, proto),
                              build_subdictionary(grid, u2, proto)});
}

// Non-equispaced f values: the signal is affine in f at fixed r, so an
// equispaced grid would make interior-f atoms exactly representable by
// their neighbors and ties would swallow the argmin.
ParamGrid small_grid() {
  ParamGrid grid;
  grid.r_values = {1.0, 2.0, 3.0, 4.0};
  grid.f_values = {0.15, 0.33, 0.52, 0.74, 0.9};
  return grid;  // 20 atoms per block
}

}  // namespace

TEST_CASE("weights_to_fractions normalizes and flags degenerate fits") {
  Vector w(2);
  w << 0.5, 0.5;
  bool degenerate = true;
  Vector nu = weights_to_fractions(w, &degenerate);
  CHECK_FALSE(degenerate);
  CHECK(nu[0] == doctest::Approx(0.5));
  CHECK(nu[1] == doctest::Approx(0.5));

  w << 2.0, 0.0;
  nu = weights_to_fractions(w);
  CHECK(nu[0] == doctest::Approx(1.0));
  CHECK(nu[1] == doctest::Approx(0.0));

  w << 0.3, 0.1;
  nu = weights_to_fractions(w);
  CHECK(nu[0] == doctest::Approx(0.75));
  CHECK(nu[1] == doctest::Approx(0.25));

  w << 0.0, 0.0;
  nu = weights_to_fractions(w, &degenerate);
  CHECK(degenerate);
  CHECK(nu[0] == doctest::Approx(0.5));
  CHECK(nu[1] == doctest::Approx(0.5));

  w << -0.1, 0.1;
  CHECK_THROWS_AS(weights_to_fractions(w), ConfigError);
}

TEST_CASE("exact in-dictionary composition is recovered") {
  const Dictionary dict = two_block_dictionary(small_grid(), 60.0);
  const Vector y =
      0.5 * dict.subs[0].atoms.col(3) + 0.5 * dict.subs[1].atoms.col(7);

  const FingerprintFit fit = fit_exhaustive(y, dict);
  CHECK(fit.atom_indices == std::vector<Index>{3, 7});
  CHECK(fit.weights[0] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(fit.weights[1] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(fit.fractions[0] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(fit.residual_norm <= 1e-10);
  CHECK(fit.combos_evaluated == 400);
  CHECK_FALSE(fit.degenerate);
  CHECK(fit.params[0].radius_um == small_grid().r_values[0]);
  CHECK(fit.params[0].density == small_grid().f_values[3]);
  CHECK(fit.params[1].radius_um == small_grid().r_values[1]);
  CHECK(fit.params[1].density == small_grid().f_values[2]);
}

TEST_CASE("single-atom voxel leaves the other block at zero") {
  const Dictionary dict = two_block_dictionary(small_grid(), 60.0);
  const Vector y = dict.subs[0].atoms.col(5);

  const FingerprintFit fit = fit_exhaustive(y, dict);
  CHECK(fit.atom_indices[0] == 5);
  CHECK(fit.weights[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.weights[1] == 0.0);
  CHECK(fit.fractions[0] == doctest::Approx(1.0));
  CHECK(fit.fractions[1] == doctest::Approx(0.0));
  CHECK(fit.residual_norm <= 1e-10);
}

TEST_CASE("fit matches the naive double-loop oracle on noisy voxels") {
  const Dictionary dict = two_block_dictionary(small_grid(), 45.0);
  const Protocol proto = make_desk_protocol();
  Rng rng(2718);
  for (int trial = 0; trial < 5; ++trial) {
    PopulationParams p1{Vector3::UnitZ(), rng.uniform(0.5, 5.0),
                        rng.uniform(0.1, 0.9)};
    const double rad = 45.0 * Rng::kPi / 180.0;
    PopulationParams p2{Vector3(std::sin(rad), 0.0, std::cos(rad)),
                        rng.uniform(0.5, 5.0), rng.uniform(0.1, 0.9)};
    VoxelConfig voxel;
    voxel.populations = {p1, p2};
    const double nu1 = rng.uniform(0.2, 0.8);
    voxel.fractions = Vector(2);
    voxel.fractions << nu1, 1.0 - nu1;
    const Vector y = add_rician_noise(mix_signal(voxel, proto),
                                      {50.0, rng.next()});

    const FingerprintFit fit = fit_exhaustive(y, dict);
    const OracleFingerprintResult oracle = oracle_fingerprint(y, dict);
    CHECK(fit.atom_indices == oracle.tuple);
    CHECK(std::abs(fit.residual_norm - oracle.residual_norm) <= 1e-8);
  }
}

TEST_CASE("three-block dictionaries agree with the oracle") {
  const Protocol proto = make_desk_protocol();
  ParamGrid grid;
  grid.r_values = {1.0, 3.0};
  grid.f_values = {0.3, 0.6, 0.9};
  Rng rng(314);
  const Dictionary dict = assemble_dictionary(
      {build_subdictionary(grid, Vector3::UnitZ(), proto),
       build_subdictionary(grid, Vector3::UnitX(), proto),
       build_subdictionary(grid, Vector3(0.0, 1.0, 1.0).normalized(), proto)});

  const Vector y = add_rician_noise(
      (0.4 * dict.subs[0].atoms.col(1) + 0.35 * dict.subs[1].atoms.col(4) +
       0.25 * dict.subs[2].atoms.col(2))
          .eval(),
      {40.0, 9090});
  const FingerprintFit fit = fit_exhaustive(y, dict);
  const OracleFingerprintResult oracle = oracle_fingerprint(y, dict);
  CHECK(fit.atom_indices == oracle.tuple);
  CHECK(std::abs(fit.residual_norm - oracle.residual_norm) <= 1e-8);
  CHECK(fit.combos_evaluated == 216);
}

TEST_CASE("no sampled tuple beats the exhaustive minimum") {
  const Dictionary dict = two_block_dictionary(small_grid(), 45.0);
  const Protocol proto = make_desk_protocol();
  Rng rng(55);
  PopulationParams p1{Vector3::UnitZ(), 2.2, 0.5};
  PopulationParams p2{Vector3::UnitX(), 3.8, 0.7};
  VoxelConfig voxel;
  voxel.populations = {p1, p2};
  voxel.fractions = Vector(2);
  voxel.fractions << 0.6, 0.4;
  const Vector y =
      add_rician_noise(mix_signal(voxel, proto), {30.0, 777});

  const FingerprintFit fit = fit_exhaustive(y, dict);
  for (int sample = 0; sample < 1000; ++sample) {
    const Index j1 = static_cast<Index>(rng.next() % 20);
    const Index j2 = static_cast<Index>(rng.next() % 20);
    Matrix atoms(dict.rows(), 2);
    atoms.col(0) = dict.subs[0].atoms.col(j1);
    atoms.col(1) = dict.subs[1].atoms.col(j2);
    const NnlsSolution sol = nnls_solve(atoms, y);
    CHECK(sol.residual_norm >= fit.residual_norm - 1e-10);
  }
}

TEST_CASE("noiseless in-dictionary voxels are recovered exactly") {
  const ParamGrid grid = small_grid();
  const Dictionary dict = two_block_dictionary(grid, 35.0);
  Rng rng(808);
  for (int trial = 0; trial < 10; ++trial) {
    const Index j1 = static_cast<Index>(rng.next() % 20);
    const Index j2 = static_cast<Index>(rng.next() % 20);
    const double nu1 = rng.uniform(0.1, 0.9);
    const Vector y = nu1 * dict.subs[0].atoms.col(j1) +
                     (1.0 - nu1) * dict.subs[1].atoms.col(j2);
    const FingerprintFit fit = fit_exhaustive(y, dict);
    CHECK(fit.atom_indices == std::vector<Index>{j1, j2});
    CHECK(std::abs(fit.fractions[0] - nu1) <= 1e-8);
    CHECK(std::abs(fit.fractions[1] - (1.0 - nu1)) <= 1e-8);
  }
}

TEST_CASE("the block-structured constraint can only raise the residual") {
  const Dictionary dict = two_block_dictionary(small_grid(), 45.0);
  const Protocol proto = make_desk_protocol();
  Rng rng(606);
  for (int trial = 0; trial < 5; ++trial) {
    PopulationParams p1{Vector3::UnitZ(), rng.uniform(0.5, 5.0),
                        rng.uniform(0.0, 0.9)};
    PopulationParams p2{Vector3::UnitX(), rng.uniform(0.5, 5.0),
                        rng.uniform(0.0, 0.9)};
    VoxelConfig voxel;
    voxel.populations = {p1, p2};
    voxel.fractions = Vector(2);
    voxel.fractions << 0.5, 0.5;
    const Vector y =
        add_rician_noise(mix_signal(voxel, proto), {25.0, rng.next()});
    const FingerprintFit fit = fit_exhaustive(y, dict);
    const NnlsSolution relaxed = nnls_solve(dict.atoms, y);
    CHECK(fit.residual_norm >= relaxed.residual_norm);
  }
}

TEST_CASE("results are independent of the thread count") {
  const Dictionary dict = two_block_dictionary(small_grid(), 45.0);
  const Protocol proto = make_desk_protocol();
  PopulationParams p1{Vector3::UnitZ(), 2.0, 0.45};
  PopulationParams p2{Vector3::UnitX(), 4.0, 0.65};
  VoxelConfig voxel;
  voxel.populations = {p1, p2};
  voxel.fractions = Vector(2);
  voxel.fractions << 0.35, 0.65;
  const Vector y = add_rician_noise(mix_signal(voxel, proto), {50.0, 11});

  const FingerprintFit one = fit_exhaustive(y, dict, {}, 1);
  const FingerprintFit three = fit_exhaustive(y, dict, {}, 3);
  CHECK(one.atom_indices == three.atom_indices);
  CHECK(std::memcmp(one.weights.data(), three.weights.data(),
                    sizeof(double) * one.weights.size()) == 0);
  CHECK(std::memcmp(&one.residual_norm, &three.residual_norm,
                    sizeof(double)) == 0);
}

TEST_CASE("dimension mismatches are rejected") {
  const Dictionary dict = two_block_dictionary(small_grid(), 45.0);
  CHECK_THROWS_AS(fit_exhaustive(Vector::Ones(dict.rows() + 1), dict),
                  DimensionMismatch);
}
