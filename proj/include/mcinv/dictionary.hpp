#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "mcinv/forward_model.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

// Per-contribution fingerprint dictionaries over an (r, f) parameter grid.
// Orientations are not grid dimensions; each sub-dictionary is built at one
// orientation and rebuilt per voxel as needed.

struct ParamGrid {
  std::vector<double> r_values;  // strictly increasing, in [0.5, 5.0]
  std::vector<double> f_values;  // strictly increasing, in [0, 0.9]

  Index size() const {
    return static_cast<Index>(r_values.size() * f_values.size());
  }
  void validate() const;

  static ParamGrid regular(Index r_count, double r_min, double r_max,
                           Index f_count, double f_min, double f_max);
  // 12 x 10 default used throughout the desk-scale experiments.
  static ParamGrid desk();
};

struct AtomParams {
  double radius_um = 0.0;
  double density = 0.0;
};

struct SubDictionary {
  Vector3 orientation = Vector3::UnitZ();
  Matrix atoms;                         // M x N_k, one fingerprint per column
  std::vector<AtomParams> atom_params;  // aligned with columns

  Index cols() const { return atoms.cols(); }
};

struct Dictionary {
  std::vector<SubDictionary> subs;
  std::vector<Index> column_offsets;  // start column of each sub-block
  Matrix atoms;                       // M x N_tot, blocks concatenated

  Index rows() const { return atoms.rows(); }
  Index cols() const { return atoms.cols(); }
  Index blocks() const { return static_cast<Index>(subs.size()); }

  // Maps a flat column index to (block, column within block).
  std::pair<Index, Index> locate(Index column) const;
};

// Columns ordered lexicographically by (r index, f index); every column has
// value 1 at b=0 rows.
SubDictionary build_subdictionary(const ParamGrid& grid, const Vector3& u,
                                  const Protocol& proto);

Dictionary assemble_dictionary(std::vector<SubDictionary> subs);

// Unit vector at exactly angle_deg degrees from u, azimuth drawn uniformly
// from the seeded generator. angle 0 returns u unchanged.
Vector3 perturb_orientation(const Vector3& u, double angle_deg,
                            std::uint64_t seed);

// Memoizing builder keyed by orientation quantized at 1e-6. Safe for
// concurrent lookup/insert; the grid and protocol are fixed per cache.
class SubDictionaryCache {
 public:
  SubDictionaryCache(ParamGrid grid, Protocol proto)
      : grid_(std::move(grid)), proto_(std::move(proto)) {}

  const SubDictionary& get(const Vector3& u);
  std::size_t entries() const;

 private:
  using Key = std::array<std::int64_t, 3>;
  static Key quantize(const Vector3& u);

  ParamGrid grid_;
  Protocol proto_;
  mutable std::mutex mutex_;
  std::map<Key, SubDictionary> store_;
};

// CSV bundle round-trip; layout documented in docs/FORMATS.md.
void save_dictionary_csv(const std::string& path, const Dictionary& dict,
                         std::uint64_t protocol_hash);
Dictionary load_dictionary_csv(const std::string& path,
                               std::uint64_t* protocol_hash = nullptr);

}  // namespace mcinv
