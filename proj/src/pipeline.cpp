#include "mcinv/pipeline.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mcinv/csv.hpp"
#include "mcinv/parallel.hpp"
#include "mcinv/rng.hpp"

namespace mcinv {

namespace {

using json = nlohmann::ordered_json;

double now_us() {
  return std::chrono::duration<double, std::micro>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  return values[std::min(values.size() - 1, std::max<std::size_t>(rank, 1) - 1)];
}

// Unit vector at `angle` radians from u with the given azimuth in u's
// deterministic orthonormal frame.
Vector3 tilt_from(const Vector3& u, double angle, double azimuth) {
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(u[i]) < std::abs(u[least])) least = i;
  Vector3 axis = Vector3::Zero();
  axis[least] = 1.0;
  const Vector3 e1 = u.cross(axis).normalized();
  const Vector3 e2 = u.cross(e1);
  return (std::cos(angle) * u +
          std::sin(angle) * (std::cos(azimuth) * e1 + std::sin(azimuth) * e2))
      .normalized();
}

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;
constexpr std::uint64_t kNoiseStream = 1;
constexpr std::uint64_t kParamStream = 2;
constexpr std::uint64_t kPerturbStreamBase = 3;
constexpr std::uint64_t kHybridInitStream = 10;
constexpr std::uint64_t kHybridTrainStream = 11;
constexpr std::uint64_t kFullInitStream = 12;
constexpr std::uint64_t kFullTrainStream = 13;
constexpr std::uint64_t kBenchStream = 99;

}  // namespace

Protocol resolve_protocol(const ExperimentConfig& cfg) {
  if (cfg.protocol == "desk") return make_desk_protocol();
  if (cfg.protocol == "paper") return make_paper_scale_protocol();
  return load_protocol_csv(cfg.protocol);
}

std::uint64_t protocol_hash(const Protocol& proto) {
  std::ostringstream out;
  for (const auto& m : proto.measurements)
    out << format_double(m.b_value) << "," << format_double(m.direction.x())
        << "," << format_double(m.direction.y()) << ","
        << format_double(m.direction.z()) << "\n";
  return fnv1a_hash(out.str());
}

void save_protocol_csv(const std::string& path, const Protocol& proto) {
  std::ostringstream out;
  out << "b_value,gx,gy,gz\n";
  for (const auto& m : proto.measurements)
    out << format_double(m.b_value) << "," << format_double(m.direction.x())
        << "," << format_double(m.direction.y()) << ","
        << format_double(m.direction.z()) << "\n";
  write_text_file(path, out.str());
}

Protocol load_protocol_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty protocol file");
  Protocol proto;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) throw IoError(path + ": bad protocol row");
    Measurement m;
    m.b_value = parse_double(fields[0]);
    m.direction = {parse_double(fields[1]), parse_double(fields[2]),
                   parse_double(fields[3])};
    proto.measurements.push_back(m);
  }
  proto.validate();
  return proto;
}

Dataset gen_dataset(const ExperimentConfig& cfg, const Protocol& proto,
                    DatasetSplit split, Index count) {
  require(count >= 1, "gen_dataset: count must be >= 1");
  require(cfg.populations == 2, "gen_dataset: pipeline supports 2 populations");
  proto.validate();

  const std::uint64_t stream = Rng::child_seed(
      cfg.master_seed, split == DatasetSplit::kTrain ? kTrainStream : kTestStream);
  const auto& sampling = cfg.sampling;

  Dataset dataset;
  dataset.samples.resize(static_cast<std::size_t>(count));
  dataset.signals.resize(proto.size(), count);

  parallel_for(count, cfg.threads, [&](Index i) {
    const std::uint64_t sample_seed =
        Rng::child_seed(stream, static_cast<std::uint64_t>(i));
    Rng rng(Rng::child_seed(sample_seed, kParamStream));

    DatasetSample sample;
    const Vector3 u1 = rng.unit_vector();
    const double crossing = rng.uniform(sampling.crossing_min_deg,
                                        sampling.crossing_max_deg) *
                            Rng::kPi / 180.0;
    const double azimuth = 2.0 * Rng::kPi * rng.uniform();
    const Vector3 u2 = tilt_from(u1, crossing, azimuth);
    const double nu1 = rng.uniform(sampling.nu_min, 1.0 - sampling.nu_min);

    sample.populations.resize(2);
    sample.populations[0].orientation = u1;
    sample.populations[1].orientation = u2;
    for (auto& p : sample.populations) {
      p.radius_um = rng.uniform(sampling.r_min, sampling.r_max);
      p.density = rng.uniform(sampling.f_min, sampling.f_max);
    }
    sample.fractions = Vector(2);
    sample.fractions << nu1, 1.0 - nu1;
    sample.snr =
        cfg.snr_levels[static_cast<std::size_t>(i) % cfg.snr_levels.size()];
    sample.noise_seed = Rng::child_seed(sample_seed, kNoiseStream);

    VoxelConfig voxel{sample.populations, sample.fractions};
    const Vector clean = mix_signal(voxel, proto);
    dataset.signals.col(i) =
        add_rician_noise(clean, {sample.snr, sample.noise_seed});
    dataset.samples[static_cast<std::size_t>(i)] = std::move(sample);
  });
  return dataset;
}

void save_dataset_csv(const std::string& path, const Dataset& dataset,
                      std::uint64_t protocol_hash_value) {
  const Index m = dataset.measurement_count();
  std::ostringstream out;
  out << "# mcinv-dataset v1 M=" << m
      << " K=" << dataset.samples.front().populations.size()
      << " protocol_hash=" << hash_hex(protocol_hash_value) << "\n";
  const std::size_t k = dataset.samples.front().populations.size();
  for (std::size_t p = 1; p <= k; ++p)
    out << "u" << p << "x,u" << p << "y,u" << p << "z,nu" << p << ",r" << p
        << ",f" << p << ",";
  out << "snr,seed";
  for (Index i = 0; i < m; ++i) out << ",s" << i;
  out << "\n";
  for (Index s = 0; s < dataset.size(); ++s) {
    const auto& sample = dataset.samples[static_cast<std::size_t>(s)];
    for (std::size_t p = 0; p < k; ++p) {
      const auto& pop = sample.populations[p];
      out << format_double(pop.orientation.x()) << ","
          << format_double(pop.orientation.y()) << ","
          << format_double(pop.orientation.z()) << ","
          << format_double(sample.fractions[static_cast<Index>(p)]) << ","
          << format_double(pop.radius_um) << ","
          << format_double(pop.density) << ",";
    }
    out << format_double(sample.snr) << "," << sample.noise_seed;
    for (Index i = 0; i < m; ++i)
      out << "," << format_double(dataset.signals(i, s));
    out << "\n";
  }
  write_text_file(path, out.str());
}

Dataset load_dataset_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("# mcinv-dataset", 0) != 0)
    throw IoError(path + ": not an mcinv dataset file");
  if (!std::getline(in, line)) throw IoError(path + ": missing dataset header");
  const auto header = split_csv_line(line);

  std::size_t k = 0;
  while (header.size() > 6 * (k + 1) &&
         header[6 * k] == "u" + std::to_string(k + 1) + "x")
    ++k;
  if (k == 0) throw IoError(path + ": bad dataset header");
  const std::size_t fixed = 6 * k + 2;
  if (header.size() <= fixed) throw IoError(path + ": dataset has no signals");
  const Index m = static_cast<Index>(header.size() - fixed);

  std::vector<std::string> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(line);

  Dataset dataset;
  dataset.samples.resize(rows.size());
  dataset.signals.resize(m, static_cast<Index>(rows.size()));
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto fields = split_csv_line(rows[s]);
    if (fields.size() != header.size())
      throw IoError(path + ": dataset row width mismatch");
    DatasetSample& sample = dataset.samples[s];
    sample.populations.resize(k);
    sample.fractions.resize(static_cast<Index>(k));
    for (std::size_t p = 0; p < k; ++p) {
      const std::size_t base = 6 * p;
      sample.populations[p].orientation = {parse_double(fields[base]),
                                           parse_double(fields[base + 1]),
                                           parse_double(fields[base + 2])};
      sample.fractions[static_cast<Index>(p)] = parse_double(fields[base + 3]);
      sample.populations[p].radius_um = parse_double(fields[base + 4]);
      sample.populations[p].density = parse_double(fields[base + 5]);
    }
    sample.snr = parse_double(fields[6 * k]);
    sample.noise_seed =
        parse_uint(fields[6 * k + 1]);
    for (Index i = 0; i < m; ++i)
      dataset.signals(i, static_cast<Index>(s)) =
          parse_double(fields[fixed + static_cast<std::size_t>(i)]);
  }
  return dataset;
}

std::vector<Vector3> scenario_orientations(const DatasetSample& sample,
                                           OrientationScenario scenario,
                                           double angle_deg) {
  std::vector<Vector3> orientations;
  orientations.reserve(sample.populations.size());
  for (std::size_t p = 0; p < sample.populations.size(); ++p) {
    const Vector3& u = sample.populations[p].orientation;
    if (scenario == OrientationScenario::kGroundTruth) {
      orientations.push_back(u);
    } else {
      orientations.push_back(perturb_orientation(
          u, angle_deg,
          Rng::child_seed(sample.noise_seed, kPerturbStreamBase + p)));
    }
  }
  return orientations;
}

Vector stage1_features(const Vector& y, const Dictionary& dict,
                       const NnlsOptions& opts) {
  require_dims(y.size() == dict.rows(),
               "stage1_features: y length must equal dictionary rows");
  return nnls_solve(dict.atoms, y, opts).weights;
}

namespace {

Dictionary voxel_dictionary(const ParamGrid& grid, const Protocol& proto,
                            const std::vector<Vector3>& orientations) {
  std::vector<SubDictionary> subs;
  subs.reserve(orientations.size());
  for (const auto& u : orientations)
    subs.push_back(build_subdictionary(grid, u, proto));
  return assemble_dictionary(std::move(subs));
}

ParamGrid grid_from_spec(const GridSpec& g) {
  return ParamGrid::regular(g.r_count, g.r_min, g.r_max, g.f_count, g.f_min,
                            g.f_max);
}

}  // namespace

Stage1Batch stage1_batch(const Dataset& dataset, const ExperimentConfig& cfg,
                         const Protocol& proto, OrientationScenario scenario,
                         int threads) {
  const ParamGrid grid = grid_from_spec(cfg.grid);
  const Index n = dataset.size();
  const Index n_tot = grid.size() * cfg.populations;

  Stage1Batch batch;
  batch.features.resize(n_tot, n);
  batch.support_size.resize(static_cast<std::size_t>(n));
  batch.wall_us.resize(static_cast<std::size_t>(n));
  batch.residual.resize(static_cast<std::size_t>(n));

  parallel_for(n, threads, [&](Index i) {
    const auto& sample = dataset.samples[static_cast<std::size_t>(i)];
    const Dictionary dict = voxel_dictionary(
        grid, proto,
        scenario_orientations(sample, scenario, cfg.perturb_angle_deg));
    const double t0 = now_us();
    const NnlsSolution sol = nnls_solve(dict.atoms, dataset.signals.col(i),
                                        cfg.nnls);
    batch.wall_us[static_cast<std::size_t>(i)] = now_us() - t0;
    batch.features.col(i) = sol.weights;
    batch.support_size[static_cast<std::size_t>(i)] =
        static_cast<Index>(sol.support.size());
    batch.residual[static_cast<std::size_t>(i)] = sol.residual_norm;
  });
  return batch;
}

double EvalReport::mae(const std::string& parameter, Index bin,
                       double snr) const {
  for (const auto& e : entries)
    if (e.parameter == parameter && e.bin == bin && e.snr == snr) return e.mae;
  throw ConfigError("eval report: no entry for parameter '" + parameter + "'");
}

Index EvalReport::count(const std::string& parameter, Index bin,
                        double snr) const {
  for (const auto& e : entries)
    if (e.parameter == parameter && e.bin == bin && e.snr == snr)
      return e.count;
  throw ConfigError("eval report: no entry for parameter '" + parameter + "'");
}

EvalReport evaluate(const Predictions& predictions, const Dataset& dataset,
                    const EvalSpec& spec) {
  require_dims(static_cast<Index>(predictions.size()) == dataset.size(),
               "evaluate: predictions and dataset sizes differ");

  const Index bins = spec.nu_bins;
  EvalReport report;
  report.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (Index b = 0; b <= bins; ++b)
    report.bin_edges[static_cast<std::size_t>(b)] =
        spec.nu_bin_min + (spec.nu_bin_max - spec.nu_bin_min) *
                              static_cast<double>(b) / static_cast<double>(bins);

  struct Accumulator {
    double total = 0.0;
    Index count = 0;
  };
  // Keyed by (parameter index, bin, snr index); snr index 0 = all.
  std::vector<double> snr_levels;
  for (const auto& sample : dataset.samples)
    if (std::find(snr_levels.begin(), snr_levels.end(), sample.snr) ==
        snr_levels.end())
      snr_levels.push_back(sample.snr);
  std::sort(snr_levels.begin(), snr_levels.end());

  const auto acc_index = [&](int param, Index bin, std::size_t snr_idx) {
    return (static_cast<std::size_t>(param) * static_cast<std::size_t>(bins + 1) +
            static_cast<std::size_t>(bin)) *
               (snr_levels.size() + 1) +
           snr_idx;
  };
  std::vector<Accumulator> acc(3 * static_cast<std::size_t>(bins + 1) *
                               (snr_levels.size() + 1));

  for (Index s = 0; s < dataset.size(); ++s) {
    const auto& sample = dataset.samples[static_cast<std::size_t>(s)];
    const auto& pred = predictions[static_cast<std::size_t>(s)];
    const std::size_t k = sample.populations.size();
    require_dims(pred.populations.size() == k,
                 "evaluate: population count mismatch");

    // Pair predictions with reference populations.
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    bool oriented = true;
    for (const auto& p : pred.populations) oriented = oriented && p.has_orientation;
    if (oriented) {
      std::vector<std::size_t> candidate = perm;
      std::vector<std::size_t> best = perm;
      double best_score = -1.0;
      do {
        double score = 0.0;
        for (std::size_t p = 0; p < k; ++p)
          score += std::abs(sample.populations[p].orientation.dot(
              pred.populations[candidate[p]].orientation));
        if (score > best_score) {
          best_score = score;
          best = candidate;
        }
      } while (std::next_permutation(candidate.begin(), candidate.end()));
      perm = best;
    } else {
      // Fraction ordering on both sides.
      std::vector<std::size_t> truth_order(k), pred_order(k);
      std::iota(truth_order.begin(), truth_order.end(), std::size_t{0});
      std::iota(pred_order.begin(), pred_order.end(), std::size_t{0});
      std::stable_sort(truth_order.begin(), truth_order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return sample.fractions[static_cast<Index>(a)] >
                                sample.fractions[static_cast<Index>(b)];
                       });
      std::stable_sort(pred_order.begin(), pred_order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return pred.populations[a].nu > pred.populations[b].nu;
                       });
      for (std::size_t p = 0; p < k; ++p) perm[truth_order[p]] = pred_order[p];
    }

    const std::size_t snr_idx =
        1 + static_cast<std::size_t>(
                std::find(snr_levels.begin(), snr_levels.end(), sample.snr) -
                snr_levels.begin());

    for (std::size_t p = 0; p < k; ++p) {
      const auto& est = pred.populations[perm[p]];
      const double err[3] = {
          std::abs(est.nu - sample.fractions[static_cast<Index>(p)]),
          std::abs(est.r - sample.populations[p].radius_um),
          std::abs(est.f - sample.populations[p].density)};
      // Each population falls into the bin of its own reference fraction.
      const double nu = sample.fractions[static_cast<Index>(p)];
      Index bin = 1 + static_cast<Index>(std::floor(
                          (nu - spec.nu_bin_min) /
                          (spec.nu_bin_max - spec.nu_bin_min) *
                          static_cast<double>(bins)));
      bin = std::max<Index>(1, std::min(bins, bin));
      for (int param = 0; param < 3; ++param) {
        for (const Index b : {Index(0), bin}) {
          for (const std::size_t si : {std::size_t{0}, snr_idx}) {
            auto& a = acc[acc_index(param, b, si)];
            a.total += err[param];
            a.count += 1;
          }
        }
      }
    }
  }

  const char* param_names[3] = {"nu", "r", "f"};
  for (int param = 0; param < 3; ++param) {
    for (Index b = 0; b <= bins; ++b) {
      for (std::size_t si = 0; si <= snr_levels.size(); ++si) {
        const auto& a = acc[acc_index(param, b, si)];
        EvalEntry entry;
        entry.parameter = param_names[param];
        entry.bin = b;
        entry.snr = si == 0 ? 0.0 : snr_levels[si - 1];
        entry.count = a.count;
        if (a.count > 0) entry.mae = a.total / static_cast<double>(a.count);
        report.entries.push_back(std::move(entry));
      }
    }
  }

  std::vector<double> walls, residuals;
  for (const auto& pred : predictions) {
    walls.push_back(pred.wall_us);
    if (std::isfinite(pred.residual_norm))
      residuals.push_back(pred.residual_norm);
  }
  report.timing_mean_us =
      std::accumulate(walls.begin(), walls.end(), 0.0) /
      static_cast<double>(walls.size());
  report.timing_p50_us = percentile(walls, 0.50);
  report.timing_p95_us = percentile(walls, 0.95);
  if (!residuals.empty()) {
    report.residual_mean =
        std::accumulate(residuals.begin(), residuals.end(), 0.0) /
        static_cast<double>(residuals.size());
    report.residual_p50 = percentile(residuals, 0.50);
    report.residual_p95 = percentile(residuals, 0.95);
  }
  return report;
}

MethodRun run_fingerprint(const ExperimentConfig& cfg, const Protocol& proto,
                          const Dataset& test, OrientationScenario scenario,
                          int threads, std::vector<FingerprintFit>* fits) {
  const ParamGrid grid = grid_from_spec(cfg.grid);

  MethodRun run;
  run.predictions.resize(static_cast<std::size_t>(test.size()));
  if (fits) fits->resize(static_cast<std::size_t>(test.size()));
  parallel_for(test.size(), threads, [&](Index i) {
    const auto& sample = test.samples[static_cast<std::size_t>(i)];
    const Dictionary dict = voxel_dictionary(
        grid, proto,
        scenario_orientations(sample, scenario, cfg.perturb_angle_deg));
    const double t0 = now_us();
    const FingerprintFit fit =
        fit_exhaustive(test.signals.col(i), dict, cfg.nnls, 1);
    const double wall = now_us() - t0;

    SamplePrediction pred;
    pred.wall_us = wall;
    pred.residual_norm = fit.residual_norm;
    pred.populations.resize(fit.orientations.size());
    for (std::size_t p = 0; p < fit.orientations.size(); ++p) {
      auto& est = pred.populations[p];
      est.has_orientation = true;
      est.orientation = fit.orientations[p];
      est.nu = fit.fractions[static_cast<Index>(p)];
      est.r = fit.params[p].radius_um;
      est.f = fit.params[p].density;
    }
    run.predictions[static_cast<std::size_t>(i)] = std::move(pred);
    if (fits) (*fits)[static_cast<std::size_t>(i)] = fit;
  });
  run.report = evaluate(run.predictions, test, cfg.eval);
  return run;
}

Matrix encode_targets(const Dataset& dataset, const SamplingSpec& sampling,
                      bool sort_by_fraction) {
  const std::size_t k = dataset.samples.front().populations.size();
  Matrix targets(3 * static_cast<Index>(k), dataset.size());
  for (Index s = 0; s < dataset.size(); ++s) {
    const auto& sample = dataset.samples[static_cast<std::size_t>(s)];
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (sort_by_fraction)
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return sample.fractions[static_cast<Index>(a)] >
                                sample.fractions[static_cast<Index>(b)];
                       });
    for (std::size_t p = 0; p < k; ++p) {
      const auto& pop = sample.populations[order[p]];
      const Index row = 3 * static_cast<Index>(p);
      targets(row, s) = sample.fractions[static_cast<Index>(order[p])];
      targets(row + 1, s) = (pop.radius_um - sampling.r_min) /
                            (sampling.r_max - sampling.r_min);
      targets(row + 2, s) =
          (pop.density - sampling.f_min) / (sampling.f_max - sampling.f_min);
    }
  }
  return targets;
}

Predictions decode_predictions(const Matrix& outputs,
                               const SamplingSpec& sampling) {
  require(outputs.rows() % 3 == 0, "decode_predictions: bad output size");
  const Index k = outputs.rows() / 3;
  Predictions preds(static_cast<std::size_t>(outputs.cols()));
  for (Index s = 0; s < outputs.cols(); ++s) {
    auto& pred = preds[static_cast<std::size_t>(s)];
    pred.populations.resize(static_cast<std::size_t>(k));
    for (Index p = 0; p < k; ++p) {
      auto& est = pred.populations[static_cast<std::size_t>(p)];
      est.has_orientation = false;
      est.nu = std::clamp(outputs(3 * p, s), 0.0, 1.0);
      est.r = std::clamp(
          sampling.r_min + outputs(3 * p + 1, s) * (sampling.r_max - sampling.r_min),
          sampling.r_min, sampling.r_max);
      est.f = std::clamp(
          sampling.f_min + outputs(3 * p + 2, s) * (sampling.f_max - sampling.f_min),
          sampling.f_min, sampling.f_max);
    }
  }
  return preds;
}

HybridRun run_hybrid(const ExperimentConfig& cfg, const Protocol& proto,
                     const Dataset& train, const Dataset& test,
                     OrientationScenario scenario, int threads) {
  const ParamGrid grid = grid_from_spec(cfg.grid);
  const Index n_k = grid.size();

  // Training features always use the reference orientations; the scenario
  // only degrades the test-time inputs.
  Stage1Batch train_features = stage1_batch(
      train, cfg, proto, OrientationScenario::kGroundTruth, threads);
  Stage1Batch test_features =
      stage1_batch(test, cfg, proto, scenario, threads);

  SplitTopology topology;
  topology.branch_input_sizes.assign(static_cast<std::size_t>(cfg.populations),
                                     n_k);
  topology.branch_hidden.assign(static_cast<std::size_t>(cfg.populations),
                                cfg.hybrid.branch_hidden);
  topology.joint_hidden = cfg.hybrid.joint_hidden;
  topology.output_size = 3 * cfg.populations;

  MlpSpec spec;
  spec.topology = topology;
  spec.dropout_rate = cfg.hybrid.dropout;
  spec.seed = Rng::child_seed(cfg.master_seed, kHybridInitStream);

  TrainConfig train_cfg = cfg.hybrid.train;
  train_cfg.seed = Rng::child_seed(cfg.master_seed, kHybridTrainStream);

  const Matrix targets = encode_targets(train, cfg.sampling, false);
  auto [model, log] = train_mlp(spec, train_features.features, targets, train_cfg);

  HybridRun run;
  run.stage1_support = test_features.support_size;

  Matrix outputs(model.output_size, test.size());
  std::vector<double> forward_us(static_cast<std::size_t>(test.size()));
  for (Index i = 0; i < test.size(); ++i) {
    const double t0 = now_us();
    const ForwardTrace trace =
        forward(model, test_features.features.col(i), false, nullptr);
    forward_us[static_cast<std::size_t>(i)] = now_us() - t0;
    outputs.col(i) = trace.output;
  }

  run.result.predictions = decode_predictions(outputs, cfg.sampling);
  for (Index i = 0; i < test.size(); ++i) {
    auto& pred = run.result.predictions[static_cast<std::size_t>(i)];
    const auto orientations = scenario_orientations(
        test.samples[static_cast<std::size_t>(i)], scenario,
        cfg.perturb_angle_deg);
    for (std::size_t p = 0; p < pred.populations.size(); ++p) {
      pred.populations[p].has_orientation = true;
      pred.populations[p].orientation = orientations[p];
    }
    pred.residual_norm = test_features.residual[static_cast<std::size_t>(i)];
    pred.wall_us = test_features.wall_us[static_cast<std::size_t>(i)] +
                   forward_us[static_cast<std::size_t>(i)];
  }
  run.result.report = evaluate(run.result.predictions, test, cfg.eval);
  run.model = std::move(model);
  run.log = std::move(log);
  return run;
}

FullRun run_full(const ExperimentConfig& cfg, const Dataset& train,
                 const Dataset& test) {
  PlainTopology topology;
  topology.layer_sizes.push_back(train.measurement_count());
  for (const Index h : cfg.full.hidden) topology.layer_sizes.push_back(h);
  topology.layer_sizes.push_back(3 * cfg.populations);

  MlpSpec spec;
  spec.topology = topology;
  spec.dropout_rate = cfg.full.dropout;
  spec.seed = Rng::child_seed(cfg.master_seed, kFullInitStream);

  TrainConfig train_cfg = cfg.full.train;
  train_cfg.seed = Rng::child_seed(cfg.master_seed, kFullTrainStream);

  const Matrix targets = encode_targets(train, cfg.sampling, true);
  auto [model, log] = train_mlp(spec, train.signals, targets, train_cfg);

  FullRun run;
  Matrix outputs(model.output_size, test.size());
  std::vector<double> forward_us(static_cast<std::size_t>(test.size()));
  for (Index i = 0; i < test.size(); ++i) {
    const double t0 = now_us();
    const ForwardTrace trace = forward(model, test.signals.col(i), false, nullptr);
    forward_us[static_cast<std::size_t>(i)] = now_us() - t0;
    outputs.col(i) = trace.output;
  }
  run.result.predictions = decode_predictions(outputs, cfg.sampling);
  for (Index i = 0; i < test.size(); ++i)
    run.result.predictions[static_cast<std::size_t>(i)].wall_us =
        forward_us[static_cast<std::size_t>(i)];
  run.result.report = evaluate(run.result.predictions, test, cfg.eval);
  run.model = std::move(model);
  run.log = std::move(log);
  return run;
}

namespace {

BenchmarkRow timing_row(const std::string& method, Index columns,
                        Index combinations, std::vector<double> walls) {
  BenchmarkRow row;
  row.method = method;
  row.dictionary_columns = columns;
  row.combinations = combinations;
  row.mean_us = std::accumulate(walls.begin(), walls.end(), 0.0) /
                static_cast<double>(walls.size());
  row.p50_us = percentile(walls, 0.50);
  row.p95_us = percentile(walls, 0.95);
  return row;
}

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg,
                                        const Protocol& proto) {
  ExperimentConfig bench_cfg = cfg;
  bench_cfg.master_seed = Rng::child_seed(cfg.master_seed, kBenchStream);
  bench_cfg.snr_levels = {50.0};
  const Dataset voxels =
      gen_dataset(bench_cfg, proto, DatasetSplit::kTest, cfg.bench_voxels);

  const ParamGrid grid = grid_from_spec(cfg.grid);
  GridSpec doubled_spec = cfg.grid;
  doubled_spec.f_count *= 2;  // doubles every block, quadruples the combos
  const ParamGrid doubled = grid_from_spec(doubled_spec);

  // Dictionaries are precomputed outside the timed region for all methods.
  const Index n = voxels.size();
  std::vector<Dictionary> dicts(static_cast<std::size_t>(n));
  std::vector<Dictionary> dicts2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::vector<Vector3> orientations;
    for (const auto& p : voxels.samples[static_cast<std::size_t>(i)].populations)
      orientations.push_back(p.orientation);
    dicts[static_cast<std::size_t>(i)] = voxel_dictionary(grid, proto, orientations);
    dicts2[static_cast<std::size_t>(i)] = voxel_dictionary(doubled, proto, orientations);
  }

  // Inference cost does not depend on trained weight values, so seeded
  // untrained models of the configured shapes are timed.
  PlainTopology plain;
  plain.layer_sizes.push_back(proto.size());
  for (const Index h : cfg.full.hidden) plain.layer_sizes.push_back(h);
  plain.layer_sizes.push_back(3 * cfg.populations);
  const MlpModel full_model =
      build_mlp({plain, cfg.full.dropout, Rng::child_seed(cfg.master_seed, kFullInitStream)});

  auto split_model_for = [&](Index n_k) {
    SplitTopology topology;
    topology.branch_input_sizes.assign(static_cast<std::size_t>(cfg.populations), n_k);
    topology.branch_hidden.assign(static_cast<std::size_t>(cfg.populations),
                                  cfg.hybrid.branch_hidden);
    topology.joint_hidden = cfg.hybrid.joint_hidden;
    topology.output_size = 3 * cfg.populations;
    return build_mlp({topology, cfg.hybrid.dropout,
                      Rng::child_seed(cfg.master_seed, kHybridInitStream)});
  };
  const MlpModel split_model = split_model_for(grid.size());
  const MlpModel split_model2 = split_model_for(doubled.size());

  std::vector<double> t_full(static_cast<std::size_t>(n));
  std::vector<double> t_hybrid(static_cast<std::size_t>(n));
  std::vector<double> t_hybrid2(static_cast<std::size_t>(n));
  std::vector<double> t_fp(static_cast<std::size_t>(n));
  std::vector<double> t_fp2(static_cast<std::size_t>(n));

  for (Index i = 0; i < n; ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    const Vector y = voxels.signals.col(i);

    double t0 = now_us();
    const ForwardTrace full_trace = forward(full_model, y, false, nullptr);
    t_full[s] = now_us() - t0;
    (void)full_trace;

    t0 = now_us();
    const Vector w1 = stage1_features(y, dicts[s], cfg.nnls);
    const ForwardTrace hybrid_trace = forward(split_model, w1, false, nullptr);
    t_hybrid[s] = now_us() - t0;
    (void)hybrid_trace;

    t0 = now_us();
    const Vector w2 = stage1_features(y, dicts2[s], cfg.nnls);
    const ForwardTrace hybrid_trace2 = forward(split_model2, w2, false, nullptr);
    t_hybrid2[s] = now_us() - t0;
    (void)hybrid_trace2;

    t0 = now_us();
    const FingerprintFit fit = fit_exhaustive(y, dicts[s], cfg.nnls, 1);
    t_fp[s] = now_us() - t0;
    (void)fit;

    t0 = now_us();
    const FingerprintFit fit2 = fit_exhaustive(y, dicts2[s], cfg.nnls, 1);
    t_fp2[s] = now_us() - t0;
    (void)fit2;
  }

  const Index n_tot = grid.size() * cfg.populations;
  const Index n_tot2 = doubled.size() * cfg.populations;
  const Index combos = grid.size() * grid.size();
  const Index combos2 = doubled.size() * doubled.size();

  std::vector<BenchmarkRow> rows;
  rows.push_back(timing_row("fully-learned", 0, 0, t_full));
  rows.push_back(timing_row("hybrid", n_tot, 0, t_hybrid));
  rows.push_back(timing_row("hybrid-2x", n_tot2, 0, t_hybrid2));
  rows.push_back(timing_row("fingerprinting", n_tot, combos, t_fp));
  rows.push_back(timing_row("fingerprinting-2x", n_tot2, combos2, t_fp2));
  return rows;
}

void save_predictions_csv(const std::string& path, const Predictions& preds,
                          const std::string& method,
                          const std::string& scenario) {
  require(!preds.empty(), "save_predictions_csv: empty predictions");
  const std::size_t k = preds.front().populations.size();
  std::ostringstream out;
  out << "# mcinv-predictions v1 method=" << method
      << " scenario=" << scenario << " K=" << k << "\n";
  out << "sample";
  for (std::size_t p = 1; p <= k; ++p)
    out << ",has_u" << p << ",u" << p << "x,u" << p << "y,u" << p << "z,nu"
        << p << ",r" << p << ",f" << p;
  out << ",residual,wall_us\n";
  for (std::size_t s = 0; s < preds.size(); ++s) {
    out << s;
    for (const auto& est : preds[s].populations) {
      out << "," << (est.has_orientation ? 1 : 0) << ","
          << format_double(est.orientation.x()) << ","
          << format_double(est.orientation.y()) << ","
          << format_double(est.orientation.z()) << ","
          << format_double(est.nu) << "," << format_double(est.r) << ","
          << format_double(est.f);
    }
    out << "," << format_double(preds[s].residual_norm) << ","
        << format_double(preds[s].wall_us) << "\n";
  }
  write_text_file(path, out.str());
}

Predictions load_predictions_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("# mcinv-predictions", 0) != 0)
    throw IoError(path + ": not an mcinv predictions file");
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  const std::size_t k = (split_csv_line(line).size() - 3) / 7;

  Predictions preds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3 + 7 * k) throw IoError(path + ": bad row width");
    SamplePrediction pred;
    pred.populations.resize(k);
    for (std::size_t p = 0; p < k; ++p) {
      const std::size_t base = 1 + 7 * p;
      auto& est = pred.populations[p];
      est.has_orientation = parse_int(fields[base]) != 0;
      est.orientation = {parse_double(fields[base + 1]),
                         parse_double(fields[base + 2]),
                         parse_double(fields[base + 3])};
      est.nu = parse_double(fields[base + 4]);
      est.r = parse_double(fields[base + 5]);
      est.f = parse_double(fields[base + 6]);
    }
    pred.residual_norm = parse_double(fields[1 + 7 * k]);
    pred.wall_us = parse_double(fields[2 + 7 * k]);
    preds.push_back(std::move(pred));
  }
  return preds;
}

void save_fingerprint_fits_csv(const std::string& path,
                               const std::vector<FingerprintFit>& fits,
                               const Predictions& preds,
                               const std::string& scenario) {
  require(!fits.empty() && fits.size() == preds.size(),
          "save_fingerprint_fits_csv: fits and predictions must align");
  const std::size_t k = fits.front().atom_indices.size();
  std::ostringstream out;
  out << "# mcinv-fingerprint-fits v1 scenario=" << scenario << " K=" << k
      << "\n";
  out << "sample";
  for (std::size_t p = 1; p <= k; ++p)
    out << ",j" << p << ",w" << p << ",nu" << p << ",r" << p << ",f" << p;
  out << ",residual,combos,wall_us\n";
  for (std::size_t s = 0; s < fits.size(); ++s) {
    const auto& fit = fits[s];
    out << s;
    for (std::size_t p = 0; p < k; ++p) {
      out << "," << fit.atom_indices[p] << ","
          << format_double(fit.weights[static_cast<Index>(p)]) << ","
          << format_double(fit.fractions[static_cast<Index>(p)]) << ","
          << format_double(fit.params[p].radius_um) << ","
          << format_double(fit.params[p].density);
    }
    out << "," << format_double(fit.residual_norm) << ","
        << fit.combos_evaluated << "," << format_double(preds[s].wall_us)
        << "\n";
  }
  write_text_file(path, out.str());
}

void save_eval_report(const std::string& csv_path,
                      const std::string& timing_json_path,
                      const EvalReport& report, const std::string& method,
                      const std::string& scenario) {
  std::ostringstream out;
  out << "# mcinv-eval v1 method=" << method << " scenario=" << scenario
      << " bin_edges=";
  for (std::size_t i = 0; i < report.bin_edges.size(); ++i) {
    if (i) out << ";";
    out << format_double(report.bin_edges[i]);
  }
  out << "\n";
  out << "parameter,bin,snr,mae,count\n";
  for (const auto& e : report.entries)
    out << e.parameter << "," << e.bin << "," << format_double(e.snr) << ","
        << format_double(e.mae) << "," << e.count << "\n";
  write_text_file(csv_path, out.str());

  json timing;
  timing["format"] = "mcinv-eval-timing";
  timing["format_version"] = 1;
  timing["method"] = method;
  timing["scenario"] = scenario;
  timing["timing_us"] = {{"mean", report.timing_mean_us},
                         {"p50", report.timing_p50_us},
                         {"p95", report.timing_p95_us}};
  timing["residual"] = {{"mean", report.residual_mean},
                        {"p50", report.residual_p50},
                        {"p95", report.residual_p95}};
  write_text_file(timing_json_path, timing.dump(1) + "\n");
}

void save_benchmark_csv(const std::string& path,
                        const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "# mcinv-benchmark v1\n";
  out << "method,dictionary_columns,combinations,mean_us,p50_us,p95_us\n";
  for (const auto& row : rows)
    out << row.method << "," << row.dictionary_columns << ","
        << row.combinations << "," << format_double(row.mean_us) << ","
        << format_double(row.p50_us) << "," << format_double(row.p95_us)
        << "\n";
  write_text_file(path, out.str());
}

void save_loss_curve_csv(const std::string& path, const TrainLog& log) {
  std::ostringstream out;
  out << "# mcinv-loss v1\n";
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
    out << (e + 1) << "," << format_double(log.epoch_loss[e]) << "\n";
  write_text_file(path, out.str());
}

void save_stage1_csv(const std::string& path, const Stage1Batch& batch) {
  std::ostringstream out;
  out << "# mcinv-stage1 v1 N_tot=" << batch.features.rows() << "\n";
  out << "sample,support,residual,wall_us";
  for (Index j = 0; j < batch.features.rows(); ++j) out << ",w" << j;
  out << "\n";
  for (Index s = 0; s < batch.features.cols(); ++s) {
    out << s << "," << batch.support_size[static_cast<std::size_t>(s)] << ","
        << format_double(batch.residual[static_cast<std::size_t>(s)]) << ","
        << format_double(batch.wall_us[static_cast<std::size_t>(s)]);
    for (Index j = 0; j < batch.features.rows(); ++j)
      out << "," << format_double(batch.features(j, s));
    out << "\n";
  }
  write_text_file(path, out.str());
}

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const std::string& config_text, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  json doc;
  doc["format"] = "mcinv-manifest";
  doc["format_version"] = 1;
  doc["subcommand"] = subcommand;
  doc["seed"] = seed;
  doc["config_hash"] = hash_hex(fnv1a_hash(config_text));
  // Paths are stored relative to the output directory so a rerun into a
  // different directory produces an identical manifest.
  json names = json::array();
  for (const auto& path : outputs) {
    const auto relative =
        std::filesystem::path(path).lexically_relative(out_dir);
    names.push_back(relative.empty() ? path : relative.string());
  }
  doc["outputs"] = std::move(names);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/manifest-" + subcommand + ".json",
                  doc.dump(1) + "\n");
}

}  // namespace mcinv
