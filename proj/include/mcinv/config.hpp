#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcinv/mlp.hpp"
#include "mcinv/nnls.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

enum class OrientationScenario { kGroundTruth, kPerturbed };

struct GridSpec {
  Index r_count = 12;
  double r_min = 0.5;
  double r_max = 5.0;
  Index f_count = 10;
  double f_min = 0.1;
  double f_max = 0.9;
};

struct SamplingSpec {
  double nu_min = 0.1;  // fraction of the smaller population
  double r_min = 0.5;
  double r_max = 5.0;
  double f_min = 0.0;
  double f_max = 0.9;
  double crossing_min_deg = 15.0;
  double crossing_max_deg = 90.0;
};

struct NetConfig {
  std::vector<Index> hidden;         // plain topology hidden widths
  std::vector<Index> branch_hidden;  // split topology, per-branch widths
  std::vector<Index> joint_hidden;
  TrainConfig train;
  double dropout = 0.0;
};

struct EvalSpec {
  Index nu_bins = 5;
  double nu_bin_min = 0.1;
  double nu_bin_max = 0.9;
};

// Mirrors the key = value configuration file; see docs/FORMATS.md.
struct ExperimentConfig {
  std::string protocol = "desk";  // desk | paper | path to a protocol CSV
  std::string out_dir = "runs/desk";
  std::uint64_t master_seed = 20240601;
  int threads = 0;  // 0 = hardware concurrency
  Index populations = 2;

  GridSpec grid;
  SamplingSpec sampling;
  std::vector<double> snr_levels = {25.0, 50.0, 100.0};
  Index train_samples = 20000;
  Index test_samples = 3000;

  OrientationScenario scenario = OrientationScenario::kGroundTruth;
  double perturb_angle_deg = 5.0;

  NnlsOptions nnls;
  NetConfig full;    // fully-learned network on raw measurements
  NetConfig hybrid;  // split network on stage-1 weights
  EvalSpec eval;

  Index bench_voxels = 200;

  void validate() const;
  static ExperimentConfig defaults();
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::string scenario_name(OrientationScenario scenario);

}  // namespace mcinv
