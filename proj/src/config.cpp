#include "mcinv/config.hpp"

#include <sstream>

#include "mcinv/csv.hpp"

namespace mcinv {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<double> parse_double_list(const std::string& value) {
  std::vector<double> out;
  for (const auto& token : split_csv_line(value)) out.push_back(parse_double(trim(token)));
  return out;
}

std::vector<Index> parse_index_list(const std::string& value) {
  std::vector<Index> out;
  for (const auto& token : split_csv_line(value)) out.push_back(parse_int(trim(token)));
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.full.hidden = {256, 128, 64};
  cfg.full.dropout = 0.05;
  cfg.full.train = {5e-3, 250, 40, 1e-10, 0};
  cfg.hybrid.branch_hidden = {64, 32};
  cfg.hybrid.joint_hidden = {64, 32};
  cfg.hybrid.dropout = 0.1;
  cfg.hybrid.train = {1.5e-2, 250, 40, 1e-10, 0};
  return cfg;
}

void ExperimentConfig::validate() const {
  require(train_samples >= 1 && test_samples >= 1,
          "config: sample counts must be >= 1");
  require(!snr_levels.empty(), "config: snr list must be nonempty");
  for (const double s : snr_levels) require(s > 0.0, "config: snr values must be > 0");
  require(populations >= 1 && populations <= 4,
          "config: populations must lie in [1, 4]");
  require(perturb_angle_deg >= 0.0 && perturb_angle_deg <= 90.0,
          "config: perturb angle must lie in [0, 90]");
  require(sampling.nu_min > 0.0 && sampling.nu_min < 1.0,
          "config: nu_min must lie in (0, 1)");
  require(sampling.crossing_min_deg >= 0.0 &&
              sampling.crossing_max_deg <= 90.0 &&
              sampling.crossing_min_deg <= sampling.crossing_max_deg,
          "config: crossing angle range must lie in [0, 90]");
  require(eval.nu_bins >= 1, "config: nu_bins must be >= 1");
  require(eval.nu_bin_min < eval.nu_bin_max, "config: bad nu bin range");
  require(bench_voxels >= 1, "config: bench_voxels must be >= 1");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "protocol") cfg.protocol = value;
      else if (key == "out") cfg.out_dir = value;
      else if (key == "seed") cfg.master_seed = parse_uint(value);
      else if (key == "threads") cfg.threads = static_cast<int>(parse_int(value));
      else if (key == "populations") cfg.populations = parse_int(value);
      else if (key == "grid.r_count") cfg.grid.r_count = parse_int(value);
      else if (key == "grid.r_min") cfg.grid.r_min = parse_double(value);
      else if (key == "grid.r_max") cfg.grid.r_max = parse_double(value);
      else if (key == "grid.f_count") cfg.grid.f_count = parse_int(value);
      else if (key == "grid.f_min") cfg.grid.f_min = parse_double(value);
      else if (key == "grid.f_max") cfg.grid.f_max = parse_double(value);
      else if (key == "sample.nu_min") cfg.sampling.nu_min = parse_double(value);
      else if (key == "sample.r_min") cfg.sampling.r_min = parse_double(value);
      else if (key == "sample.r_max") cfg.sampling.r_max = parse_double(value);
      else if (key == "sample.f_min") cfg.sampling.f_min = parse_double(value);
      else if (key == "sample.f_max") cfg.sampling.f_max = parse_double(value);
      else if (key == "sample.crossing_min_deg") cfg.sampling.crossing_min_deg = parse_double(value);
      else if (key == "sample.crossing_max_deg") cfg.sampling.crossing_max_deg = parse_double(value);
      else if (key == "snr") cfg.snr_levels = parse_double_list(value);
      else if (key == "train_samples") cfg.train_samples = parse_int(value);
      else if (key == "test_samples") cfg.test_samples = parse_int(value);
      else if (key == "scenario") {
        if (value == "groundtruth") cfg.scenario = OrientationScenario::kGroundTruth;
        else if (value == "perturbed") cfg.scenario = OrientationScenario::kPerturbed;
        else throw ConfigError("config: unknown scenario '" + value + "'");
      }
      else if (key == "perturb_angle_deg") cfg.perturb_angle_deg = parse_double(value);
      else if (key == "nnls.zero_tolerance") cfg.nnls.zero_tolerance = parse_double(value);
      else if (key == "nnls.max_iterations") cfg.nnls.max_iterations = parse_int(value);
      else if (key == "full.hidden") cfg.full.hidden = parse_index_list(value);
      else if (key == "full.dropout") cfg.full.dropout = parse_double(value);
      else if (key == "full.learning_rate") cfg.full.train.learning_rate = parse_double(value);
      else if (key == "full.minibatch") cfg.full.train.minibatch_size = parse_int(value);
      else if (key == "full.epochs") cfg.full.train.epochs = parse_int(value);
      else if (key == "hybrid.branch_hidden") cfg.hybrid.branch_hidden = parse_index_list(value);
      else if (key == "hybrid.joint_hidden") cfg.hybrid.joint_hidden = parse_index_list(value);
      else if (key == "hybrid.dropout") cfg.hybrid.dropout = parse_double(value);
      else if (key == "hybrid.learning_rate") cfg.hybrid.train.learning_rate = parse_double(value);
      else if (key == "hybrid.minibatch") cfg.hybrid.train.minibatch_size = parse_int(value);
      else if (key == "hybrid.epochs") cfg.hybrid.train.epochs = parse_int(value);
      else if (key == "eval.nu_bins") cfg.eval.nu_bins = parse_int(value);
      else if (key == "eval.nu_bin_min") cfg.eval.nu_bin_min = parse_double(value);
      else if (key == "eval.nu_bin_max") cfg.eval.nu_bin_max = parse_double(value);
      else if (key == "bench.voxels") cfg.bench_voxels = parse_int(value);
      else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const IoError& err) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " +
                        err.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

std::string scenario_name(OrientationScenario scenario) {
  return scenario == OrientationScenario::kGroundTruth ? "groundtruth"
                                                       : "perturbed";
}

}  // namespace mcinv
