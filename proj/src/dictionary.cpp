#include "mcinv/dictionary.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <sstream>

#include "mcinv/csv.hpp"
#include "mcinv/rng.hpp"

namespace mcinv {

void ParamGrid::validate() const {
  require(!r_values.empty() && !f_values.empty(), "grid: empty parameter grid");
  auto check_sorted = [](const std::vector<double>& v, const char* name) {
    for (std::size_t i = 1; i < v.size(); ++i)
      require(v[i] > v[i - 1], std::string("grid: ") + name +
                                   " values must be strictly increasing");
  };
  check_sorted(r_values, "r");
  check_sorted(f_values, "f");
  require(r_values.front() >= 0.5 && r_values.back() <= 5.0,
          "grid: r values must lie in [0.5, 5.0]");
  require(f_values.front() >= 0.0 && f_values.back() <= 0.9,
          "grid: f values must lie in [0, 0.9]");
}

ParamGrid ParamGrid::regular(Index r_count, double r_min, double r_max,
                             Index f_count, double f_min, double f_max) {
  require(r_count >= 1 && f_count >= 1, "grid: counts must be >= 1");
  ParamGrid grid;
  auto linspace = [](Index count, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(count));
    if (count == 1) {
      v[0] = lo;
      return v;
    }
    for (Index i = 0; i < count; ++i)
      v[static_cast<std::size_t>(i)] =
          lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return v;
  };
  grid.r_values = linspace(r_count, r_min, r_max);
  grid.f_values = linspace(f_count, f_min, f_max);
  grid.validate();
  return grid;
}

// f starts above zero so every atom keeps an orientation-dependent part;
// an f=0 column would be identical for all radii and orientations.
ParamGrid ParamGrid::desk() { return regular(12, 0.5, 5.0, 10, 0.1, 0.9); }

std::pair<Index, Index> Dictionary::locate(Index column) const {
  require_dims(column >= 0 && column < cols(), "dictionary: column out of range");
  Index block = blocks() - 1;
  while (block > 0 && column < column_offsets[static_cast<std::size_t>(block)])
    --block;
  return {block, column - column_offsets[static_cast<std::size_t>(block)]};
}

SubDictionary build_subdictionary(const ParamGrid& grid, const Vector3& u,
                                  const Protocol& proto) {
  grid.validate();
  proto.validate();
  SubDictionary sub;
  sub.orientation = u;
  sub.atoms.resize(proto.size(), grid.size());
  sub.atom_params.resize(static_cast<std::size_t>(grid.size()));
  Index col = 0;
  for (const double r : grid.r_values) {
    for (const double f : grid.f_values) {
      PopulationParams p{u, r, f};
      sub.atoms.col(col) = signal_population(p, proto);
      sub.atom_params[static_cast<std::size_t>(col)] = {r, f};
      ++col;
    }
  }
  return sub;
}

Dictionary assemble_dictionary(std::vector<SubDictionary> subs) {
  require(!subs.empty(), "dictionary: needs at least one sub-dictionary");
  const Index rows = subs.front().atoms.rows();
  Index total = 0;
  for (const auto& sub : subs) {
    require_dims(sub.atoms.rows() == rows,
                 "dictionary: sub-dictionaries disagree on protocol size");
    total += sub.cols();
  }
  Dictionary dict;
  dict.atoms.resize(rows, total);
  Index offset = 0;
  for (auto& sub : subs) {
    dict.column_offsets.push_back(offset);
    dict.atoms.middleCols(offset, sub.cols()) = sub.atoms;
    offset += sub.cols();
  }
  dict.subs = std::move(subs);
  return dict;
}

Vector3 perturb_orientation(const Vector3& u, double angle_deg,
                            std::uint64_t seed) {
  require(angle_deg >= 0.0 && angle_deg <= 90.0,
          "perturb_orientation: angle must lie in [0, 90] degrees");
  if (angle_deg == 0.0) return u;

  // Orthonormal frame: pick the standard axis least aligned with u.
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(u[i]) < std::abs(u[least])) least = i;
  Vector3 axis = Vector3::Zero();
  axis[least] = 1.0;
  const Vector3 e1 = u.cross(axis).normalized();
  const Vector3 e2 = u.cross(e1);

  Rng rng(seed);
  const double azimuth = 2.0 * Rng::kPi * rng.uniform();
  const double angle = angle_deg * Rng::kPi / 180.0;
  const Vector3 tilted = std::cos(angle) * u +
                         std::sin(angle) * (std::cos(azimuth) * e1 +
                                            std::sin(azimuth) * e2);
  return tilted.normalized();
}

SubDictionaryCache::Key SubDictionaryCache::quantize(const Vector3& u) {
  Key key;
  for (int i = 0; i < 3; ++i)
    key[static_cast<std::size_t>(i)] =
        static_cast<std::int64_t>(std::llround(u[i] * 1e6));
  return key;
}

const SubDictionary& SubDictionaryCache::get(const Vector3& u) {
  const Key key = quantize(u);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = store_.find(key);
    if (it != store_.end()) return it->second;
  }
  SubDictionary built = build_subdictionary(grid_, u, proto_);
  std::lock_guard<std::mutex> lock(mutex_);
  return store_.emplace(key, std::move(built)).first->second;
}

std::size_t SubDictionaryCache::entries() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return store_.size();
}

void save_dictionary_csv(const std::string& path, const Dictionary& dict,
                         std::uint64_t protocol_hash) {
  std::ostringstream out;
  out << "# mcinv-dictionary v1\n";
  out << "protocol_hash," << hash_hex(protocol_hash) << "\n";
  out << "blocks," << dict.blocks() << "\n";
  out << "rows," << dict.rows() << "\n";
  out << "offsets";
  for (const Index off : dict.column_offsets) out << "," << off;
  out << "\n";
  for (const auto& sub : dict.subs) {
    out << "orientation," << format_double(sub.orientation.x()) << ","
        << format_double(sub.orientation.y()) << ","
        << format_double(sub.orientation.z()) << "," << sub.cols() << "\n";
  }
  out << "block,column,r,f\n";
  for (Index b = 0; b < dict.blocks(); ++b) {
    const auto& sub = dict.subs[static_cast<std::size_t>(b)];
    for (Index c = 0; c < sub.cols(); ++c) {
      const auto& ap = sub.atom_params[static_cast<std::size_t>(c)];
      out << b << "," << c << "," << format_double(ap.radius_um) << ","
          << format_double(ap.density) << "\n";
    }
  }
  out << "matrix," << dict.rows() << "," << dict.cols() << "\n";
  for (Index r = 0; r < dict.rows(); ++r) {
    for (Index c = 0; c < dict.cols(); ++c) {
      if (c) out << ",";
      out << format_double(dict.atoms(r, c));
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

Dictionary load_dictionary_csv(const std::string& path,
                               std::uint64_t* protocol_hash) {
  std::istringstream in(read_text_file(path));
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw IoError(path + ": truncated dictionary");
    return split_csv_line(line);
  };

  next_line();  // format banner
  auto fields = next_line();
  if (fields.size() != 2 || fields[0] != "protocol_hash")
    throw IoError(path + ": missing protocol_hash");
  if (protocol_hash)
    *protocol_hash = std::stoull(fields[1], nullptr, 16);
  fields = next_line();
  const Index blocks = parse_int(fields.at(1));
  fields = next_line();
  const Index rows = parse_int(fields.at(1));
  fields = next_line();
  if (static_cast<Index>(fields.size()) != blocks + 1)
    throw IoError(path + ": bad offsets row");

  std::vector<SubDictionary> subs(static_cast<std::size_t>(blocks));
  std::vector<Index> block_cols(static_cast<std::size_t>(blocks));
  for (Index b = 0; b < blocks; ++b) {
    fields = next_line();
    if (fields.size() != 5 || fields[0] != "orientation")
      throw IoError(path + ": bad orientation row");
    auto& sub = subs[static_cast<std::size_t>(b)];
    sub.orientation = {parse_double(fields[1]), parse_double(fields[2]),
                       parse_double(fields[3])};
    block_cols[static_cast<std::size_t>(b)] = parse_int(fields[4]);
    sub.atoms.resize(rows, block_cols[static_cast<std::size_t>(b)]);
    sub.atom_params.resize(
        static_cast<std::size_t>(block_cols[static_cast<std::size_t>(b)]));
  }

  next_line();  // metadata header
  for (Index b = 0; b < blocks; ++b) {
    for (Index c = 0; c < block_cols[static_cast<std::size_t>(b)]; ++c) {
      fields = next_line();
      if (fields.size() != 4) throw IoError(path + ": bad metadata row");
      subs[static_cast<std::size_t>(b)]
          .atom_params[static_cast<std::size_t>(c)] = {parse_double(fields[2]),
                                                       parse_double(fields[3])};
    }
  }

  fields = next_line();
  if (fields.size() != 3 || fields[0] != "matrix")
    throw IoError(path + ": missing matrix header");
  const Index total = parse_int(fields[2]);
  Matrix atoms(rows, total);
  for (Index r = 0; r < rows; ++r) {
    fields = next_line();
    if (static_cast<Index>(fields.size()) != total)
      throw IoError(path + ": bad matrix row");
    for (Index c = 0; c < total; ++c)
      atoms(r, c) = parse_double(fields[static_cast<std::size_t>(c)]);
  }

  Index offset = 0;
  for (Index b = 0; b < blocks; ++b) {
    auto& sub = subs[static_cast<std::size_t>(b)];
    sub.atoms = atoms.middleCols(offset, block_cols[static_cast<std::size_t>(b)]);
    offset += block_cols[static_cast<std::size_t>(b)];
  }
  return assemble_dictionary(std::move(subs));
}

}  // namespace mcinv
