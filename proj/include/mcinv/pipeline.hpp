#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mcinv/config.hpp"
#include "mcinv/dictionary.hpp"
#include "mcinv/fingerprinting.hpp"
#include "mcinv/forward_model.hpp"
#include "mcinv/mlp.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

// End-to-end orchestration: dataset synthesis, the two-stage hybrid
// pipeline, the fully-learned baseline, exhaustive fingerprinting, MAE
// evaluation stratified by volume fraction, and runtime benchmarks.

struct DatasetSample {
  std::vector<PopulationParams> populations;
  Vector fractions;
  double snr = 0.0;
  std::uint64_t noise_seed = 0;
};

struct Dataset {
  std::vector<DatasetSample> samples;
  Matrix signals;  // M x samples, one noisy measurement vector per column

  Index size() const { return static_cast<Index>(samples.size()); }
  Index measurement_count() const { return signals.rows(); }
};

enum class DatasetSplit { kTrain, kTest };

Protocol resolve_protocol(const ExperimentConfig& cfg);
std::uint64_t protocol_hash(const Protocol& proto);
void save_protocol_csv(const std::string& path, const Protocol& proto);
Protocol load_protocol_csv(const std::string& path);

// Latent parameters drawn uniformly from the configured ranges, crossing
// angle uniform in the configured interval, SNR levels cycled in index
// order. Fully reproducible from (master seed, split).
Dataset gen_dataset(const ExperimentConfig& cfg, const Protocol& proto,
                    DatasetSplit split, Index count);

void save_dataset_csv(const std::string& path, const Dataset& dataset,
                      std::uint64_t protocol_hash_value);
Dataset load_dataset_csv(const std::string& path);

// Orientations the dictionary is built at for one voxel: the ground-truth
// orientations, or perturbations seeded from the sample's stored seed, so
// the scenario is reproducible from the dataset file alone.
std::vector<Vector3> scenario_orientations(const DatasetSample& sample,
                                           OrientationScenario scenario,
                                           double angle_deg);

// First stage of the hybrid method: one NNLS over the full dictionary.
Vector stage1_features(const Vector& y, const Dictionary& dict,
                       const NnlsOptions& opts);

struct Stage1Batch {
  Matrix features;                  // N_tot x samples
  std::vector<Index> support_size;  // per sample
  std::vector<double> wall_us;      // per sample
  std::vector<double> residual;     // per sample
};

// Per-voxel dictionaries follow the scenario; samples processed in
// parallel, results ordered by sample index.
Stage1Batch stage1_batch(const Dataset& dataset, const ExperimentConfig& cfg,
                         const Protocol& proto, OrientationScenario scenario,
                         int threads);

struct PopulationEstimate {
  bool has_orientation = false;
  Vector3 orientation = Vector3::UnitZ();
  double nu = 0.0;
  double r = 0.0;
  double f = 0.0;
};

struct SamplePrediction {
  std::vector<PopulationEstimate> populations;
  double residual_norm = std::numeric_limits<double>::quiet_NaN();
  double wall_us = 0.0;
};

using Predictions = std::vector<SamplePrediction>;

struct EvalEntry {
  std::string parameter;  // "nu", "r" or "f"
  Index bin = 0;          // 0 = all samples, 1..B = nu bins
  double snr = 0.0;       // 0 = all snr levels
  double mae = std::numeric_limits<double>::quiet_NaN();
  Index count = 0;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  std::vector<double> bin_edges;  // nu_bins + 1 edges over the nu range
  double timing_mean_us = 0.0;
  double timing_p50_us = 0.0;
  double timing_p95_us = 0.0;
  double residual_mean = std::numeric_limits<double>::quiet_NaN();
  double residual_p50 = std::numeric_limits<double>::quiet_NaN();
  double residual_p95 = std::numeric_limits<double>::quiet_NaN();

  double mae(const std::string& parameter, Index bin = 0, double snr = 0.0) const;
  Index count(const std::string& parameter, Index bin = 0, double snr = 0.0) const;
};

// Pairs predicted and reference populations by orientation proximity when
// predictions carry orientations (best permutation under sum |u . u_hat|),
// otherwise by descending volume fraction; then reports MAE per parameter,
// overall and per SNR level and per nu-bin, where every population counts
// toward the bin of its own reference fraction.
EvalReport evaluate(const Predictions& predictions, const Dataset& dataset,
                    const EvalSpec& spec);

struct MethodRun {
  Predictions predictions;
  EvalReport report;
};

// When `fits` is non-null the per-voxel fits (atom indices, raw weights)
// are stored there in sample order.
MethodRun run_fingerprint(const ExperimentConfig& cfg, const Protocol& proto,
                          const Dataset& test, OrientationScenario scenario,
                          int threads,
                          std::vector<FingerprintFit>* fits = nullptr);

struct HybridRun {
  MlpModel model;
  TrainLog log;
  MethodRun result;
  std::vector<Index> stage1_support;  // per test voxel
};

// Trains the split network on ground-truth-orientation stage-1 features,
// then predicts from features extracted under the requested scenario.
HybridRun run_hybrid(const ExperimentConfig& cfg, const Protocol& proto,
                     const Dataset& train, const Dataset& test,
                     OrientationScenario scenario, int threads);

struct FullRun {
  MlpModel model;
  TrainLog log;
  MethodRun result;
};

// Fully-learned baseline straight from the measurement vectors; target
// populations ordered by descending volume fraction.
FullRun run_full(const ExperimentConfig& cfg, const Dataset& train,
                 const Dataset& test);

// Target encoding shared by both learned methods: per population
// (nu, r, f) scaled to [0, 1] by the sampling ranges.
Matrix encode_targets(const Dataset& dataset, const SamplingSpec& sampling,
                      bool sort_by_fraction);
Predictions decode_predictions(const Matrix& outputs,
                               const SamplingSpec& sampling);

struct BenchmarkRow {
  std::string method;
  Index dictionary_columns = 0;
  Index combinations = 0;
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p95_us = 0.0;
};

// Per-voxel inference timings for the three methods on a shared set of
// voxels, plus doubled-grid rows for scaling checks. Runs on one thread.
std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg,
                                        const Protocol& proto);

// Output helpers shared by the CLI and the acceptance suite.
void save_predictions_csv(const std::string& path, const Predictions& preds,
                          const std::string& method,
                          const std::string& scenario);
Predictions load_predictions_csv(const std::string& path);
// One row per voxel: selected atom index, weight, fraction and (r, f) per
// block, then residual and wall time.
void save_fingerprint_fits_csv(const std::string& path,
                               const std::vector<FingerprintFit>& fits,
                               const Predictions& preds,
                               const std::string& scenario);
void save_eval_report(const std::string& csv_path,
                      const std::string& timing_json_path,
                      const EvalReport& report, const std::string& method,
                      const std::string& scenario);
void save_benchmark_csv(const std::string& path,
                        const std::vector<BenchmarkRow>& rows);
void save_loss_curve_csv(const std::string& path, const TrainLog& log);
void save_stage1_csv(const std::string& path, const Stage1Batch& batch);

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const std::string& config_text, std::uint64_t seed,
                    const std::vector<std::string>& outputs);

}  // namespace mcinv
