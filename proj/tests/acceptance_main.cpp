// Acceptance suite: runs every release criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails. Heavier than the unit suite: builds the full desk-scale
// experiment (both orientation scenarios, all three methods) once and
// derives several criteria from it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mcinv/csv.hpp"
#include "mcinv/parallel.hpp"
#include "mcinv/pipeline.hpp"
#include "oracles.hpp"

using namespace mcinv;
using namespace mcinv::testing;

namespace {

struct CriterionResult {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared desk-scale experiment.

struct DeskExperiment {
  ExperimentConfig cfg;
  Protocol proto;
  Dataset train;
  Dataset test;
  MethodRun fp_gt, fp_pt;
  HybridRun hy_gt, hy_pt;
  FullRun full;
  Stage1Batch stage1_gt, stage1_pt;
  double wall_seconds = 0.0;
};

DeskExperiment build_desk_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  DeskExperiment desk;
  desk.cfg = ExperimentConfig::defaults();
  desk.cfg.master_seed = 20240601;
  desk.cfg.threads = 0;  // all cores
  desk.proto = make_desk_protocol();
  desk.train = gen_dataset(desk.cfg, desk.proto, DatasetSplit::kTrain,
                           desk.cfg.train_samples);
  desk.test = gen_dataset(desk.cfg, desk.proto, DatasetSplit::kTest,
                          desk.cfg.test_samples);
  std::printf("  [desk] datasets ready (%.1f s)\n", seconds_since(t0));

  desk.fp_gt = run_fingerprint(desk.cfg, desk.proto, desk.test,
                               OrientationScenario::kGroundTruth, 0);
  desk.fp_pt = run_fingerprint(desk.cfg, desk.proto, desk.test,
                               OrientationScenario::kPerturbed, 0);
  std::printf("  [desk] fingerprinting done (%.1f s)\n", seconds_since(t0));

  desk.stage1_gt = stage1_batch(desk.test, desk.cfg, desk.proto,
                                OrientationScenario::kGroundTruth, 0);
  desk.stage1_pt = stage1_batch(desk.test, desk.cfg, desk.proto,
                                OrientationScenario::kPerturbed, 0);

  desk.hy_gt = run_hybrid(desk.cfg, desk.proto, desk.train, desk.test,
                          OrientationScenario::kGroundTruth, 0);
  desk.hy_pt = run_hybrid(desk.cfg, desk.proto, desk.train, desk.test,
                          OrientationScenario::kPerturbed, 0);
  std::printf("  [desk] hybrid done (%.1f s)\n", seconds_since(t0));

  desk.full = run_full(desk.cfg, desk.train, desk.test);
  desk.wall_seconds = seconds_since(t0);
  std::printf("  [desk] full baseline done (%.1f s)\n", desk.wall_seconds);
  return desk;
}

// ---------------------------------------------------------------------------
// Criterion 1: active-set solver vs enumeration oracle, 500 instances.

CriterionResult criterion_nnls(const DeskExperiment&) {
  CriterionResult result;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(9001);
  double worst_residual_gap = 0.0;
  int kkt_failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.next() % 9);   // 2..10
    const Index m = n + static_cast<Index>(rng.next() %
                                           static_cast<std::uint64_t>(31 - n));
    const Matrix a = random_matrix(m, n, rng);
    const Vector y = random_vector(m, rng);
    const NnlsSolution sol = nnls_solve(a, y);
    if (!kkt_report(a, y, sol.weights, 1e-8).pass) ++kkt_failures;
    const OracleNnlsResult oracle = oracle_nnls_enumerate(a, y);
    const double gap = std::abs(sol.residual_norm - oracle.residual_norm) /
                       std::max(1.0, oracle.residual_norm);
    worst_residual_gap = std::max(worst_residual_gap, gap);
  }
  const double wall = seconds_since(t0);
  result.check(worst_residual_gap <= 1e-8,
               "max relative residual gap vs oracle = " + fmt(worst_residual_gap) +
                   " (tol 1e-8)");
  result.check(kkt_failures == 0,
               "KKT failures at tol 1e-8: " + std::to_string(kkt_failures) + "/500");
  result.check(wall < 10.0, "runtime " + fmt(wall) + " s (< 10 s)");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 2: exhaustive fit vs naive double-loop oracle, 50 voxels.

CriterionResult criterion_fingerprint_oracle(const DeskExperiment&) {
  CriterionResult result;
  const auto t0 = std::chrono::steady_clock::now();
  const Protocol proto = make_desk_protocol();
  const ParamGrid grid = ParamGrid::regular(4, 0.5, 5.0, 5, 0.1, 0.9);

  int index_mismatches = 0;
  double worst_residual_gap = 0.0;
  Rng rng(424242);
  for (int voxel = 0; voxel < 50; ++voxel) {
    const Vector3 u1 = rng.unit_vector();
    Vector3 u2 = perturb_orientation(u1, rng.uniform(30.0, 90.0), rng.next());
    const Dictionary dict =
        assemble_dictionary({build_subdictionary(grid, u1, proto),
                             build_subdictionary(grid, u2, proto)});
    VoxelConfig voxel_cfg;
    voxel_cfg.populations = {
        {u1, rng.uniform(0.5, 5.0), rng.uniform(0.0, 0.9)},
        {u2, rng.uniform(0.5, 5.0), rng.uniform(0.0, 0.9)}};
    const double nu1 = rng.uniform(0.1, 0.9);
    voxel_cfg.fractions = Vector(2);
    voxel_cfg.fractions << nu1, 1.0 - nu1;
    const Vector y = add_rician_noise(mix_signal(voxel_cfg, proto),
                                      {50.0, rng.next()});

    const FingerprintFit fit = fit_exhaustive(y, dict, {}, 0);
    const OracleFingerprintResult oracle = oracle_fingerprint(y, dict);
    if (fit.atom_indices != oracle.tuple) ++index_mismatches;
    worst_residual_gap = std::max(
        worst_residual_gap, std::abs(fit.residual_norm - oracle.residual_norm));
  }
  const double wall = seconds_since(t0);
  result.check(index_mismatches == 0,
               "index tuple mismatches: " + std::to_string(index_mismatches) + "/50");
  result.check(worst_residual_gap <= 1e-8,
               "max residual gap = " + fmt(worst_residual_gap) + " (tol 1e-8)");
  result.check(wall < 5.0, "runtime " + fmt(wall) + " s (< 5 s)");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 3: noiseless exact recovery and stage-1 support recovery.

CriterionResult criterion_exact_recovery(const DeskExperiment& desk) {
  CriterionResult result;
  const Protocol& proto = desk.proto;
  const ParamGrid grid = ParamGrid::desk();
  const Index n_k = grid.size();

  int wrong_indices = 0;
  double worst_nu_error = 0.0;
  int support_hits = 0;
  Rng rng(31415);
  const int voxels = 100;
  for (int voxel = 0; voxel < voxels; ++voxel) {
    const Vector3 u1 = rng.unit_vector();
    const Vector3 u2 =
        perturb_orientation(u1, rng.uniform(30.0, 90.0), rng.next());
    const Dictionary dict =
        assemble_dictionary({build_subdictionary(grid, u1, proto),
                             build_subdictionary(grid, u2, proto)});
    const Index j1 = static_cast<Index>(rng.next() % static_cast<std::uint64_t>(n_k));
    const Index j2 = static_cast<Index>(rng.next() % static_cast<std::uint64_t>(n_k));
    const double nu1 = rng.uniform(0.1, 0.9);
    const Vector y = nu1 * dict.subs[0].atoms.col(j1) +
                     (1.0 - nu1) * dict.subs[1].atoms.col(j2);

    const FingerprintFit fit = fit_exhaustive(y, dict, {}, 0);
    if (fit.atom_indices != std::vector<Index>{j1, j2}) ++wrong_indices;
    worst_nu_error = std::max(worst_nu_error,
                              std::abs(fit.fractions[0] - nu1));
    worst_nu_error = std::max(worst_nu_error,
                              std::abs(fit.fractions[1] - (1.0 - nu1)));

    const Vector w = stage1_features(y, dict, desk.cfg.nnls);
    std::vector<Index> support;
    for (Index j = 0; j < w.size(); ++j)
      if (w[j] > 1e-9) support.push_back(j);
    if (support == std::vector<Index>{j1, n_k + j2}) ++support_hits;
  }
  result.check(wrong_indices == 0,
               "fingerprint index errors: " + std::to_string(wrong_indices) +
                   "/" + std::to_string(voxels));
  result.check(worst_nu_error <= 1e-8,
               "max |nu_hat - nu| = " + fmt(worst_nu_error) + " (tol 1e-8)");
  const double rate = 100.0 * support_hits / voxels;
  result.check(rate >= 95.0,
               "stage-1 support = generating columns in " + fmt(rate) +
                   "% of cases (needs >= 95%)");
  if (rate < 95.0)
    result.note("the surrogate signal is affine in f at fixed r, so noiseless "
                "voxels admit many exact nonnegative representations and the "
                "active-set path rarely lands on the generating pair");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 4: stage-1 residual <= fingerprinting residual on every voxel.

CriterionResult criterion_relaxation(const DeskExperiment& desk) {
  CriterionResult result;
  // Both residuals are evaluated through the same expression ||y - D w||,
  // with the fingerprint weights embedded into the full dictionary layout.
  // On voxels where the relaxed optimum is itself a one-atom-per-block
  // solution the two computed residuals tie up to rounding, so equality is
  // resolved at the residual fields' own contract (1e-10 relative); any
  // genuine violation would exceed that by many orders of magnitude.
  const ParamGrid grid = ParamGrid::desk();
  struct ChunkStat {
    Index violations = 0;
    double max_excess = 0.0;
  };
  auto violations_for = [&](OrientationScenario scenario) {
    std::vector<ChunkStat> per_chunk(
        static_cast<std::size_t>(resolve_threads(0)));
    parallel_for_chunks(
        desk.test.size(), 0, [&](Index begin, Index end, int chunk) {
          ChunkStat local;
          for (Index i = begin; i < end; ++i) {
            const auto& sample = desk.test.samples[static_cast<std::size_t>(i)];
            std::vector<SubDictionary> subs;
            for (const auto& u : scenario_orientations(
                     sample, scenario, desk.cfg.perturb_angle_deg))
              subs.push_back(build_subdictionary(grid, u, desk.proto));
            const Dictionary dict = assemble_dictionary(std::move(subs));
            const Vector y = desk.test.signals.col(i);

            const NnlsSolution stage1 = nnls_solve(dict.atoms, y, desk.cfg.nnls);
            const FingerprintFit fit = fit_exhaustive(y, dict, desk.cfg.nnls, 1);
            Vector embedded = Vector::Zero(dict.cols());
            for (Index b = 0; b < dict.blocks(); ++b)
              embedded[dict.column_offsets[static_cast<std::size_t>(b)] +
                       fit.atom_indices[static_cast<std::size_t>(b)]] =
                  fit.weights[b];
            const double r_stage1 = (y - dict.atoms * stage1.weights).norm();
            const double r_fp = (y - dict.atoms * embedded).norm();
            local.max_excess = std::max(local.max_excess, r_stage1 - r_fp);
            if (r_stage1 > r_fp * (1.0 + 1e-10)) ++local.violations;
          }
          per_chunk[static_cast<std::size_t>(chunk)] = local;
        });
    ChunkStat total;
    for (const auto& stat : per_chunk) {
      total.violations += stat.violations;
      total.max_excess = std::max(total.max_excess, stat.max_excess);
    }
    return total;
  };

  const ChunkStat gt = violations_for(OrientationScenario::kGroundTruth);
  const ChunkStat pt = violations_for(OrientationScenario::kPerturbed);
  result.check(gt.violations == 0,
               "ground-truth scenario violations: " +
                   std::to_string(gt.violations) + "/" +
                   std::to_string(desk.test.size()) + " (max stage1 - fp = " +
                   fmt(gt.max_excess) + ")");
  result.check(pt.violations == 0,
               "perturbed scenario violations: " +
                   std::to_string(pt.violations) + "/" +
                   std::to_string(desk.test.size()) + " (max stage1 - fp = " +
                   fmt(pt.max_excess) + ")");

  // Frozen sparsity thresholds for stage-1 solutions on noisy voxels.
  std::vector<Index> supports = desk.stage1_gt.support_size;
  std::sort(supports.begin(), supports.end());
  const Index median = supports[supports.size() / 2];
  const Index max_support = supports.back();
  result.check(median <= 20, "median stage-1 support = " +
                                 std::to_string(median) + " (<= 20)");
  result.check(max_support <= desk.test.measurement_count(),
               "max stage-1 support = " + std::to_string(max_support) +
                   " (<= M = " + std::to_string(desk.test.measurement_count()) +
                   ")");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 5: backprop vs central finite differences.

double min_hidden_preactivation(const MlpModel& model, const Vector& x) {
  double margin = std::numeric_limits<double>::infinity();
  Vector current = x;
  for (const auto& layer : model.layers) {
    Vector pre(layer.out_size);
    Index offset = 0;
    for (const auto& block : layer.blocks) {
      pre.segment(offset, block.weights.rows()) =
          block.weights * current.segment(block.in_offset, block.weights.cols()) +
          block.bias;
      offset += block.weights.rows();
    }
    if (layer.relu) {
      for (Index i = 0; i < pre.size(); ++i)
        margin = std::min(margin, std::abs(pre[i]));
      current = pre.cwiseMax(0.0);
    } else {
      current = pre;
    }
  }
  return margin;
}

double gradcheck_max_rel_error(MlpModel& model, const Vector& x,
                               const Vector& target) {
  const MlpGradients grads = backward(model, x, target, false, nullptr);
  std::vector<double> analytic;
  for (const auto& layer : grads.layers)
    for (const auto& block : layer) {
      for (Index i = 0; i < block.weights.size(); ++i)
        analytic.push_back(*(block.weights.data() + i));
      for (Index i = 0; i < block.bias.size(); ++i)
        analytic.push_back(*(block.bias.data() + i));
    }
  std::vector<double*> params;
  for (auto& layer : model.layers)
    for (auto& block : layer.blocks) {
      for (Index i = 0; i < block.weights.size(); ++i)
        params.push_back(block.weights.data() + i);
      for (Index i = 0; i < block.bias.size(); ++i)
        params.push_back(block.bias.data() + i);
    }

  const double h = 1e-5;
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double saved = *params[p];
    *params[p] = saved + h;
    const double up = loss_mse(forward(model, x, false, nullptr).output, target);
    *params[p] = saved - h;
    const double down = loss_mse(forward(model, x, false, nullptr).output, target);
    *params[p] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[p]), std::abs(numeric), 1e-4});
    max_rel = std::max(max_rel, std::abs(analytic[p] - numeric) / denom);
  }
  return max_rel;
}

CriterionResult criterion_gradients(const DeskExperiment&) {
  CriterionResult result;
  double worst = 0.0;
  int cases = 0;
  std::uint64_t seed = 5000;
  while (cases < 12) {
    ++seed;
    MlpSpec spec;
    spec.topology = PlainTopology{{5, 7, 6, 3}};
    spec.seed = seed;
    MlpModel model = build_mlp(spec);
    Rng rng(seed);
    const Vector x = random_vector(5, rng);
    const Vector t = random_vector(3, rng);
    if (min_hidden_preactivation(model, x) < 1e-3) continue;
    ++cases;
    worst = std::max(worst, gradcheck_max_rel_error(model, x, t));
  }
  while (cases < 24) {
    ++seed;
    SplitTopology topology;
    topology.branch_input_sizes = {4, 3};
    topology.branch_hidden = {{6, 4}, {6, 4}};
    topology.joint_hidden = {5};
    topology.output_size = 3;
    MlpSpec spec;
    spec.topology = topology;
    spec.seed = seed;
    MlpModel model = build_split_mlp(spec);
    Rng rng(seed);
    const Vector x = random_vector(7, rng);
    const Vector t = random_vector(3, rng);
    if (min_hidden_preactivation(model, x) < 1e-3) continue;
    ++cases;
    worst = std::max(worst, gradcheck_max_rel_error(model, x, t));
  }
  result.check(worst <= 1e-6, "max relative gradient error over 24 cases = " +
                                  fmt(worst) + " (tol 1e-6)");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 6: split independence, bit-exact.

CriterionResult criterion_split_independence(const DeskExperiment&) {
  CriterionResult result;
  SplitTopology topology;
  topology.branch_input_sizes = {120, 120};
  topology.branch_hidden = {{64, 32}, {64, 32}};
  topology.joint_hidden = {64, 32};
  topology.output_size = 6;
  MlpSpec spec;
  spec.topology = topology;
  spec.seed = 99;
  const MlpModel model = build_split_mlp(spec);

  Rng rng(2024);
  int mismatches = 0;
  for (int probe = 0; probe < 20; ++probe) {
    Vector x = random_vector(240, rng, 0.0, 1.0);
    Vector y = x;
    for (Index i = 120; i < 240; ++i) y[i] = rng.uniform(0.0, 1.0);
    const ForwardTrace a = forward(model, x, false, nullptr);
    const ForwardTrace b = forward(model, y, false, nullptr);
    // Branch 1 owns the first 64 units of split1 and 32 of split2.
    if (std::memcmp(a.activations[0].data(), b.activations[0].data(),
                    sizeof(double) * 64) != 0)
      ++mismatches;
    if (std::memcmp(a.activations[1].data(), b.activations[1].data(),
                    sizeof(double) * 32) != 0)
      ++mismatches;
  }
  result.check(mismatches == 0,
               "branch-1 activation mismatches over 20 probes: " +
                   std::to_string(mismatches));
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 7: Fig.-3-style trend reproduction on the desk test set.

CriterionResult criterion_trends(const DeskExperiment& desk) {
  CriterionResult result;

  struct MethodReport {
    const char* name;
    const EvalReport* report;
  };
  const MethodReport methods[3] = {
      {"fingerprinting", &desk.fp_gt.report},
      {"hybrid", &desk.hy_gt.result.report},
      {"fully-learned", &desk.full.result.report}};

  // (a) MAE(f) decreases from the lowest to the highest populated nu bin.
  for (const auto& method : methods) {
    Index lo = 0, hi = 0;
    for (Index b = 1; b <= desk.cfg.eval.nu_bins; ++b) {
      if (method.report->count("f", b) == 0) continue;
      if (lo == 0) lo = b;
      hi = b;
    }
    const double mae_lo = method.report->mae("f", lo);
    const double mae_hi = method.report->mae("f", hi);
    result.check(mae_lo > mae_hi,
                 std::string("(a) ") + method.name + ": MAE(f) bin" +
                     std::to_string(lo) + " = " + fmt(mae_lo) + " > bin" +
                     std::to_string(hi) + " = " + fmt(mae_hi));
  }

  // (b) fingerprinting's perturbation inflation exceeds the hybrid's.
  const double fp_ratio = desk.fp_pt.report.mae("f") / desk.fp_gt.report.mae("f");
  const double hy_ratio =
      desk.hy_pt.result.report.mae("f") / desk.hy_gt.result.report.mae("f");
  result.check(fp_ratio > hy_ratio,
               "(b) MAE(f) inflation under 5 deg perturbation: fingerprinting " +
                   fmt(fp_ratio) + " > hybrid " + fmt(hy_ratio));
  if (fp_ratio <= hy_ratio)
    result.note("desk-scale fingerprinting errors are noise-saturated (flat "
                "MAE from snr 25 to 1000), leaving no headroom for the "
                "orientation perturbation to register");

  // (c) per method, MAE at snr 25 >= MAE at snr 100 for nu and f.
  for (const auto& method : methods) {
    for (const char* param : {"nu", "f"}) {
      const double at25 = method.report->mae(param, 0, 25.0);
      const double at100 = method.report->mae(param, 0, 100.0);
      result.check(at25 >= at100,
                   std::string("(c) ") + method.name + ": MAE(" + param +
                       ") snr25 = " + fmt(at25) + " >= snr100 = " + fmt(at100));
    }
  }

  // Pinned desk-task thresholds for the hybrid model.
  const double hybrid_nu_50 = desk.hy_gt.result.report.mae("nu", 0, 50.0);
  result.check(hybrid_nu_50 <= 0.15,
               "hybrid MAE(nu) at snr 50 = " + fmt(hybrid_nu_50) + " (<= 0.15)");
  result.check(desk.hy_gt.log.epoch_loss[9] < desk.hy_gt.log.epoch_loss[0],
               "hybrid training progress: epoch-10 loss " +
                   fmt(desk.hy_gt.log.epoch_loss[9]) + " < epoch-1 loss " +
                   fmt(desk.hy_gt.log.epoch_loss[0]));

  result.check(desk.wall_seconds < 1800.0,
               "desk experiment wall time " + fmt(desk.wall_seconds) +
                   " s (< 1800 s)");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 8: per-voxel inference time ordering and scaling.

CriterionResult criterion_efficiency(const DeskExperiment& desk) {
  CriterionResult result;
  ExperimentConfig cfg = desk.cfg;
  cfg.bench_voxels = 200;
  const auto rows = run_benchmark(cfg, desk.proto);
  auto find = [&rows](const std::string& name) -> const BenchmarkRow& {
    for (const auto& row : rows)
      if (row.method == name) return row;
    throw ConfigError("benchmark row missing: " + name);
  };
  const auto& full = find("fully-learned");
  const auto& hybrid = find("hybrid");
  const auto& hybrid2 = find("hybrid-2x");
  const auto& fp = find("fingerprinting");
  const auto& fp2 = find("fingerprinting-2x");

  result.check(full.mean_us < hybrid.mean_us && hybrid.mean_us < fp.mean_us,
               "mean us/voxel ordering: fully-learned " + fmt(full.mean_us) +
                   " < hybrid " + fmt(hybrid.mean_us) + " < fingerprinting " +
                   fmt(fp.mean_us));
  const double fp_scale = fp2.p50_us / fp.p50_us;
  result.check(fp_scale >= 2.8 && fp_scale <= 5.2,
               "fingerprinting p50 scaling at doubled grid sides = x" +
                   fmt(fp_scale) + " (4 +/- 30%)");
  const double hy_scale = hybrid2.p50_us / hybrid.p50_us;
  result.check(hy_scale <= 3.0,
               "hybrid stage-1 p50 scaling at doubled N_tot = x" +
                   fmt(hy_scale) + " (<= 3)");
  return result;
}

// ---------------------------------------------------------------------------
// Criterion 9: CLI reruns are byte-identical up to timing columns.

std::string strip_timing_columns(const std::string& content) {
  std::istringstream in(content);
  std::ostringstream out;
  std::string line;
  std::vector<std::size_t> drop;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      out << line << "\n";
      continue;
    }
    const auto fields = split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].size() >= 3 &&
            fields[i].compare(fields[i].size() - 3, 3, "_us") == 0)
          drop.push_back(i);
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (std::find(drop.begin(), drop.end(), i) != drop.end()) continue;
      out << fields[i] << ",";
    }
    out << "\n";
  }
  return out.str();
}

CriterionResult criterion_reproducibility(const DeskExperiment&) {
  CriterionResult result;
#ifndef MCINV_CLI_PATH
  result.check(false, "CLI path not configured at build time");
  return result;
#else
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "mcinv_acceptance_rerun";
  fs::remove_all(base);
  fs::create_directories(base);

  const std::string config_path = (base / "run.cfg").string();
  write_text_file(config_path,
                  "protocol = desk\n"
                  "seed = 4242\n"
                  "threads = 2\n"
                  "grid.r_count = 6\n"
                  "grid.f_count = 5\n"
                  "train_samples = 150\n"
                  "test_samples = 100\n"
                  "hybrid.epochs = 3\n"
                  "full.epochs = 3\n");

  auto run_all = [&](const std::string& out_dir) {
    const std::string common = std::string(MCINV_CLI_PATH) + " --config " +
                               config_path + " --out " + out_dir + " ";
    std::vector<std::string> commands = {
        common + "gen-data",
        common + "fit-fingerprint",
        common + "stage1 --data test",
        common + "train-hybrid",
        common + "train-full",
        common + "eval --pred " + out_dir + "/hybrid-predictions.csv --data " +
            out_dir + "/test.csv",
    };
    for (const auto& cmd : commands) {
      const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
      if (rc != 0) return false;
    }
    return true;
  };

  const std::string dir_a = (base / "a").string();
  const std::string dir_b = (base / "b").string();
  result.check(run_all(dir_a), "first CLI pipeline run succeeds");
  result.check(run_all(dir_b), "second CLI pipeline run succeeds");
  if (!result.pass) return result;

  std::size_t compared = 0;
  std::size_t mismatched = 0;
  std::vector<std::string> mismatch_names;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const std::string name = entry.path().filename().string();
    if (name.find("timing") != std::string::npos) continue;  // wall-clock only
    const std::string a = read_text_file(entry.path().string());
    const std::string b = read_text_file((fs::path(dir_b) / name).string());
    ++compared;
    const bool same = entry.path().extension() == ".csv"
                          ? strip_timing_columns(a) == strip_timing_columns(b)
                          : a == b;
    if (!same) {
      ++mismatched;
      mismatch_names.push_back(name);
    }
  }
  std::string detail = "rerun outputs identical (excluding timing columns): " +
                       std::to_string(compared - mismatched) + "/" +
                       std::to_string(compared) + " files";
  for (const auto& name : mismatch_names) detail += " [differs: " + name + "]";
  result.check(compared >= 10 && mismatched == 0, detail);
  fs::remove_all(base);
  return result;
#endif
}

// ---------------------------------------------------------------------------
// Criterion 10: Rician noise statistics.

CriterionResult criterion_rician(const DeskExperiment&) {
  CriterionResult result;
  const Index draws = 100000;

  const Vector zero = Vector::Zero(draws);
  const Vector rayleigh = add_rician_noise(zero, {50.0, 777});
  const double mean0 = rayleigh.sum() / static_cast<double>(draws);
  const double expected = (1.0 / 50.0) * std::sqrt(Rng::kPi / 2.0);
  const double rel0 = std::abs(mean0 - expected) / expected;
  result.check(rel0 <= 0.02, "zero-signal mean vs Rayleigh sigma sqrt(pi/2): "
                                 "relative error " + fmt(rel0) + " (tol 2%)");

  const Vector level = Vector::Constant(draws, 0.3);
  const Vector gaussish = add_rician_noise(level, {100.0, 778});
  const double mean1 = gaussish.sum() / static_cast<double>(draws);
  const double rel1 = std::abs(mean1 - 0.3) / 0.3;
  result.check(rel1 <= 0.005, "snr-100 mean bias on S = 0.3: relative error " +
                                  fmt(rel1) + " (tol 0.5%)");
  return result;
}

}  // namespace

int main() {
  std::printf("mcinv acceptance suite\n");
  std::printf("building the shared desk-scale experiment...\n");
  const DeskExperiment desk = build_desk_experiment();

  struct Criterion {
    int id;
    const char* name;
    std::function<CriterionResult(const DeskExperiment&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "NNLS correctness vs enumeration oracle", criterion_nnls},
      {2, "fingerprinting vs naive double-loop oracle", criterion_fingerprint_oracle},
      {3, "noiseless exact recovery", criterion_exact_recovery},
      {4, "stage-1 relaxation inequality", criterion_relaxation},
      {5, "gradient checks vs finite differences", criterion_gradients},
      {6, "split branch independence", criterion_split_independence},
      {7, "accuracy trend reproduction", criterion_trends},
      {8, "efficiency ordering and scaling", criterion_efficiency},
      {9, "bit-identical reruns", criterion_reproducibility},
      {10, "Rician noise statistics", criterion_rician},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult result;
    try {
      result = criterion.run(desk);
    } catch (const std::exception& err) {
      result.pass = false;
      result.details.push_back(std::string("FAIL exception: ") + err.what());
    }
    std::printf("criterion %2d %s  %s  [%.1f s]\n", criterion.id,
                result.pass ? "PASS" : "FAIL", criterion.name,
                seconds_since(t0));
    for (const auto& line : result.details)
      std::printf("    %s\n", line.c_str());
    if (!result.pass) ++failures;
  }

  std::printf("summary: %d/%zu criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
