// Command-line front end: dataset synthesis, the three solvers, evaluation
// and benchmarks. Every subcommand writes a manifest so runs can be
// reproduced bit for bit from (config, seed).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcinv/csv.hpp"
#include "mcinv/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mcinv;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::string config_text;  // as loaded, for manifest hashing
};

ExperimentConfig resolve_config(GlobalArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  if (!args.config_path.empty()) {
    args.config_text = read_text_file(args.config_path);
    cfg = parse_config_text(args.config_text);
  }
  if (args.seed) cfg.master_seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.threads) cfg.threads = *args.threads;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void emit_manifest(const ExperimentConfig& cfg, const GlobalArgs& args,
                   const std::string& subcommand,
                   const std::vector<std::string>& outputs) {
  write_manifest(cfg.out_dir, subcommand, args.config_text, cfg.master_seed,
                 outputs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcinv: multi-contribution inverse problem solvers"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "experiment config file");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed override");
  std::string out_value;
  auto* out_opt = app.add_option("--out", out_value, "output directory override");
  int threads_value = 0;
  auto* threads_opt =
      app.add_option("--threads", threads_value, "worker threads (0 = all cores)");

  auto* cmd_gen_protocol =
      app.add_subcommand("gen-protocol", "write the acquisition protocol CSV");
  auto* cmd_gen_dict =
      app.add_subcommand("gen-dict", "build and save a dictionary");
  std::vector<std::string> dict_orientations = {"0,0,1", "1,0,0"};
  cmd_gen_dict->add_option("--orientation", dict_orientations,
                           "block orientation as ux,uy,uz (repeatable)");
  auto* cmd_gen_data = app.add_subcommand("gen-data", "generate datasets");
  std::string gen_split = "both";
  cmd_gen_data->add_option("--split", gen_split, "train | test | both");

  auto* cmd_fit = app.add_subcommand(
      "fit-fingerprint", "run exhaustive fingerprinting on the test set");
  auto* cmd_stage1 =
      app.add_subcommand("stage1", "stage-1 NNLS features for a dataset");
  std::string stage1_data = "test";
  cmd_stage1->add_option("--data", stage1_data,
                         "train | test | path to a dataset CSV");
  auto* cmd_train_hybrid =
      app.add_subcommand("train-hybrid", "train and evaluate the hybrid method");
  auto* cmd_train_full = app.add_subcommand(
      "train-full", "train and evaluate the fully-learned baseline");
  auto* cmd_eval =
      app.add_subcommand("eval", "evaluate saved predictions against a dataset");
  std::string eval_pred_path;
  std::string eval_data_path;
  cmd_eval->add_option("--pred", eval_pred_path, "predictions CSV")->required();
  cmd_eval->add_option("--data", eval_data_path, "dataset CSV")->required();
  auto* cmd_bench = app.add_subcommand("bench", "per-voxel inference timings");
  auto* cmd_dump = app.add_subcommand(
      "dump-activations", "export eval-mode activations of a saved model");
  std::string dump_model_path;
  std::string dump_data_path;
  std::vector<std::string> dump_layers = {"split1"};
  cmd_dump->add_option("--model", dump_model_path, "model JSON")->required();
  cmd_dump->add_option("--data", dump_data_path,
                       "dataset CSV (signals) or stage-1 CSV (features)")
      ->required();
  cmd_dump->add_option("--layers", dump_layers, "layer tags to export");

  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) args.seed = seed_value;
  if (*out_opt) args.out_dir = out_value;
  if (*threads_opt) args.threads = threads_value;

  try {
    ExperimentConfig cfg = resolve_config(args);
    const Protocol proto = resolve_protocol(cfg);
    const std::uint64_t proto_hash = protocol_hash(proto);

    if (*cmd_gen_protocol) {
      const std::string path = join(cfg.out_dir, "protocol.csv");
      save_protocol_csv(path, proto);
      emit_manifest(cfg, args, "gen-protocol", {path});
      std::cout << "protocol: " << proto.size() << " measurements -> " << path
                << "\n";
      return 0;
    }

    if (*cmd_gen_dict) {
      const ParamGrid grid =
          ParamGrid::regular(cfg.grid.r_count, cfg.grid.r_min, cfg.grid.r_max,
                             cfg.grid.f_count, cfg.grid.f_min, cfg.grid.f_max);
      std::vector<SubDictionary> subs;
      for (const auto& text : dict_orientations) {
        const auto parts = split_csv_line(text);
        if (parts.size() != 3)
          throw ConfigError("gen-dict: orientation must be ux,uy,uz");
        Vector3 u{parse_double(parts[0]), parse_double(parts[1]),
                  parse_double(parts[2])};
        subs.push_back(build_subdictionary(grid, u.normalized(), proto));
      }
      const Dictionary dict = assemble_dictionary(std::move(subs));
      const std::string path = join(cfg.out_dir, "dictionary.csv");
      save_dictionary_csv(path, dict, proto_hash);
      emit_manifest(cfg, args, "gen-dict", {path});
      std::cout << "dictionary: " << dict.rows() << " x " << dict.cols()
                << " -> " << path << "\n";
      return 0;
    }

    if (*cmd_gen_data) {
      std::vector<std::string> outputs;
      if (gen_split == "train" || gen_split == "both") {
        const Dataset train =
            gen_dataset(cfg, proto, DatasetSplit::kTrain, cfg.train_samples);
        const std::string path = join(cfg.out_dir, "train.csv");
        save_dataset_csv(path, train, proto_hash);
        outputs.push_back(path);
      }
      if (gen_split == "test" || gen_split == "both") {
        const Dataset test =
            gen_dataset(cfg, proto, DatasetSplit::kTest, cfg.test_samples);
        const std::string path = join(cfg.out_dir, "test.csv");
        save_dataset_csv(path, test, proto_hash);
        outputs.push_back(path);
      }
      if (outputs.empty())
        throw ConfigError("gen-data: --split must be train, test or both");
      emit_manifest(cfg, args, "gen-data", outputs);
      for (const auto& path : outputs) std::cout << "dataset -> " << path << "\n";
      return 0;
    }

    if (*cmd_fit) {
      const Dataset test = load_dataset_csv(join(cfg.out_dir, "test.csv"));
      std::vector<FingerprintFit> fits;
      const MethodRun run =
          run_fingerprint(cfg, proto, test, cfg.scenario, cfg.threads, &fits);
      const std::string fits_path = join(cfg.out_dir, "fingerprint-fits.csv");
      const std::string pred_path =
          join(cfg.out_dir, "fingerprint-predictions.csv");
      const std::string eval_path = join(cfg.out_dir, "fingerprint-eval.csv");
      const std::string timing_path =
          join(cfg.out_dir, "fingerprint-timing.json");
      save_fingerprint_fits_csv(fits_path, fits, run.predictions,
                                scenario_name(cfg.scenario));
      save_predictions_csv(pred_path, run.predictions, "fingerprinting",
                           scenario_name(cfg.scenario));
      save_eval_report(eval_path, timing_path, run.report, "fingerprinting",
                       scenario_name(cfg.scenario));
      emit_manifest(cfg, args, "fit-fingerprint",
                    {fits_path, pred_path, eval_path, timing_path});
      std::cout << "fingerprinting MAE(f) = "
                << format_double(run.report.mae("f")) << " -> " << eval_path
                << "\n";
      return 0;
    }

    if (*cmd_stage1) {
      Dataset data;
      if (stage1_data == "train")
        data = load_dataset_csv(join(cfg.out_dir, "train.csv"));
      else if (stage1_data == "test")
        data = load_dataset_csv(join(cfg.out_dir, "test.csv"));
      else
        data = load_dataset_csv(stage1_data);
      const Stage1Batch batch =
          stage1_batch(data, cfg, proto, cfg.scenario, cfg.threads);
      const std::string path =
          join(cfg.out_dir, "stage1-" +
                                (stage1_data == "train" ? std::string("train")
                                                        : std::string("test")) +
                                ".csv");
      save_stage1_csv(path, batch);
      emit_manifest(cfg, args, "stage1", {path});
      Index max_support = 0;
      for (const Index s : batch.support_size) max_support = std::max(max_support, s);
      std::cout << "stage1: " << batch.features.cols()
                << " samples, max support " << max_support << " -> " << path
                << "\n";
      return 0;
    }

    if (*cmd_train_hybrid) {
      const Dataset train = load_dataset_csv(join(cfg.out_dir, "train.csv"));
      const Dataset test = load_dataset_csv(join(cfg.out_dir, "test.csv"));
      const HybridRun run =
          run_hybrid(cfg, proto, train, test, cfg.scenario, cfg.threads);
      const std::string model_path = join(cfg.out_dir, "hybrid-model.json");
      const std::string loss_path = join(cfg.out_dir, "hybrid-loss.csv");
      const std::string pred_path = join(cfg.out_dir, "hybrid-predictions.csv");
      const std::string eval_path = join(cfg.out_dir, "hybrid-eval.csv");
      const std::string timing_path = join(cfg.out_dir, "hybrid-timing.json");
      save_model_json(model_path, run.model);
      save_loss_curve_csv(loss_path, run.log);
      save_predictions_csv(pred_path, run.result.predictions, "hybrid",
                           scenario_name(cfg.scenario));
      save_eval_report(eval_path, timing_path, run.result.report, "hybrid",
                       scenario_name(cfg.scenario));
      emit_manifest(cfg, args, "train-hybrid",
                    {model_path, loss_path, pred_path, eval_path, timing_path});
      std::cout << "hybrid MAE(nu) = " << format_double(run.result.report.mae("nu"))
                << ", final loss = "
                << format_double(run.log.epoch_loss.back()) << "\n";
      return 0;
    }

    if (*cmd_train_full) {
      const Dataset train = load_dataset_csv(join(cfg.out_dir, "train.csv"));
      const Dataset test = load_dataset_csv(join(cfg.out_dir, "test.csv"));
      const FullRun run = run_full(cfg, train, test);
      const std::string model_path = join(cfg.out_dir, "full-model.json");
      const std::string loss_path = join(cfg.out_dir, "full-loss.csv");
      const std::string pred_path = join(cfg.out_dir, "full-predictions.csv");
      const std::string eval_path = join(cfg.out_dir, "full-eval.csv");
      const std::string timing_path = join(cfg.out_dir, "full-timing.json");
      save_model_json(model_path, run.model);
      save_loss_curve_csv(loss_path, run.log);
      save_predictions_csv(pred_path, run.result.predictions, "fully-learned",
                           scenario_name(cfg.scenario));
      save_eval_report(eval_path, timing_path, run.result.report,
                       "fully-learned", scenario_name(cfg.scenario));
      emit_manifest(cfg, args, "train-full",
                    {model_path, loss_path, pred_path, eval_path, timing_path});
      std::cout << "fully-learned MAE(nu) = "
                << format_double(run.result.report.mae("nu")) << ", final loss = "
                << format_double(run.log.epoch_loss.back()) << "\n";
      return 0;
    }

    if (*cmd_eval) {
      const Predictions preds = load_predictions_csv(eval_pred_path);
      const Dataset data = load_dataset_csv(eval_data_path);
      const EvalReport report = evaluate(preds, data, cfg.eval);
      const std::string eval_path = join(cfg.out_dir, "eval.csv");
      const std::string timing_path = join(cfg.out_dir, "eval-timing.json");
      save_eval_report(eval_path, timing_path, report, "custom",
                       scenario_name(cfg.scenario));
      emit_manifest(cfg, args, "eval", {eval_path, timing_path});
      std::cout << "MAE nu/r/f = " << format_double(report.mae("nu")) << " / "
                << format_double(report.mae("r")) << " / "
                << format_double(report.mae("f")) << "\n";
      return 0;
    }

    if (*cmd_bench) {
      const auto rows = run_benchmark(cfg, proto);
      const std::string path = join(cfg.out_dir, "benchmark.csv");
      save_benchmark_csv(path, rows);
      emit_manifest(cfg, args, "bench", {path});
      for (const auto& row : rows)
        std::cout << row.method << ": mean " << format_double(row.mean_us)
                  << " us/voxel\n";
      return 0;
    }

    if (*cmd_dump) {
      const MlpModel model = load_model_json(dump_model_path);
      // Accept either raw dataset signals or stage-1 feature files.
      Matrix inputs;
      const std::string content = read_text_file(dump_data_path);
      if (content.rfind("# mcinv-stage1", 0) == 0) {
        std::istringstream in(content);
        std::string line;
        std::getline(in, line);
        std::getline(in, line);  // header
        std::vector<Vector> cols;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto fields = split_csv_line(line);
          Vector w(static_cast<Index>(fields.size()) - 4);
          for (Index j = 0; j < w.size(); ++j)
            w[j] = parse_double(fields[static_cast<std::size_t>(j) + 4]);
          cols.push_back(std::move(w));
        }
        require(!cols.empty(), "dump-activations: empty feature file");
        inputs.resize(cols.front().size(), static_cast<Index>(cols.size()));
        for (Index c = 0; c < inputs.cols(); ++c)
          inputs.col(c) = cols[static_cast<std::size_t>(c)];
      } else {
        const Dataset data = load_dataset_csv(dump_data_path);
        inputs = data.signals;
      }
      const auto rows = dump_activations(model, inputs, dump_layers);
      std::ostringstream out;
      out << "# mcinv-activations v1\n";
      out << "sample,layer,values...\n";
      for (const auto& row : rows) {
        out << row.sample << "," << row.layer_tag;
        for (Index i = 0; i < row.values.size(); ++i)
          out << "," << format_double(row.values[i]);
        out << "\n";
      }
      const std::string path = join(cfg.out_dir, "activations.csv");
      write_text_file(path, out.str());
      emit_manifest(cfg, args, "dump-activations", {path});
      std::cout << rows.size() << " activation rows -> " << path << "\n";
      return 0;
    }

    throw ConfigError("no subcommand selected");
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const DimensionMismatch& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const IoError& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return 3;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}
