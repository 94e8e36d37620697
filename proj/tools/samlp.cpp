#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "samlp/error.hpp"
#include "samlp/harness.hpp"

namespace {

using namespace samlp;

void append_reports(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::app);
  for (const auto& r : reports) out << to_json_line(r) << '\n';
}

void print_report(const EvalReport& r) {
  std::cout << "density " << r.density << "  samples " << r.count << "  accuracy " << r.accuracy;
  if (r.saturations) std::cout << "  saturations " << r.saturations;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplication-free point-cloud classifiers: training and evaluation"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model into a run directory");
  std::string variant = "sa", data = "synthetic", out = "runs/latest";
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> points;
  bool quiet = false;
  train->add_option("--variant", variant, "Model variant")->check(CLI::IsMember({"mul", "shift", "add", "sa"}));
  train->add_option("--data", data, "synthetic or modelnet40:<dir>");
  train->add_option("--config", config_path, "INI config; flags given on the command line override it");
  train->add_option("--seed", seed, "Random seed (default 7)");
  train->add_option("--epochs", epochs, "Epochs (default 60 synthetic, 200 ModelNet40)");
  train->add_option("--batch-size", batch_size, "Batch size (default 32)");
  train->add_option("--points", points, "Points per cloud to train at (retraining at a lower density)");
  train->add_option("--out", out, "Run directory");
  train->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  // shared evaluation options
  std::string checkpoint;
  std::optional<std::string> eval_data;
  std::optional<std::string> packed_dir;
  std::uint64_t subsample_seed = 1234;
  bool nested = false;
  auto add_eval_options = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", eval_data, "Override the checkpoint's data source");
    cmd->add_option("--packed-dir", packed_dir, "Run shift layers in fixed point from SAQ1 files")
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--subsample-seed", subsample_seed, "Seed for density subsampling");
    cmd->add_flag("--nested", nested, "Nest the subsets across densities");
  };

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  add_eval_options(eval);
  std::optional<std::size_t> density;
  eval->add_option("--density", density, "Points per cloud after subsampling");

  auto* sweep = app.add_subcommand("sweep-density", "Evaluate one checkpoint at several densities");
  add_eval_options(sweep);
  std::vector<std::size_t> densities;
  sweep->add_option("--density", densities, "Densities (default: points per cloud / 1, 2, 4, 8)");

  auto* grad = app.add_subcommand("grad-report", "Per-layer gradient RMS over training batches");
  std::size_t batches = 10;
  grad->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  grad->add_option("--data", eval_data, "Override the checkpoint's data source");
  grad->add_option("--batches", batches, "Number of batches to average over");

  auto* exp = app.add_subcommand("export", "Export weights, features or packed shift layers");
  std::string what;
  std::string export_dir = "export";
  exp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  exp->add_option("--what", what, "weights_hist, features or packed_shift")->required();
  exp->add_option("--data", eval_data, "Override the checkpoint's data source");
  exp->add_option("--out", export_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    auto data_override = [&]() -> std::optional<DataSpec> {
      if (eval_data) return parse_data_spec(*eval_data);
      return std::nullopt;
    };
    auto eval_options = [&] {
      EvalOptions o;
      o.data = data_override();
      o.subsample_seed = subsample_seed;
      o.nested = nested;
      if (packed_dir) o.packed_shift_dir = *packed_dir;
      return o;
    };

    if (*train) {
      RunConfig cfg;
      if (config_path) {
        cfg = read_config(*config_path);
        if (train->count("--variant")) cfg.model.variant = parse_variant(variant);
        if (train->count("--data")) {
          const RunConfig fresh = RunConfig::defaults(cfg.model.variant, parse_data_spec(data));
          cfg.data = fresh.data;
          cfg.model = fresh.model;
        }
      } else {
        cfg = RunConfig::defaults(parse_variant(variant), parse_data_spec(data));
      }
      if (seed) cfg.seed = *seed;
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      if (points) cfg.data.points_per_cloud = cfg.model.points_in = *points;
      if (!config_path || train->count("--out")) cfg.out_dir = out;
      const TrainResult r = cmd_train(cfg, quiet ? nullptr : &std::cout);
      std::cout << "run directory " << r.run_dir.string() << "  final test accuracy " << r.final_test_accuracy << '\n';
    } else if (*eval) {
      EvalOptions o = eval_options();
      o.density = density;
      const EvalReport r = cmd_eval(checkpoint, o);
      print_report(r);
      append_reports(std::filesystem::path(checkpoint).parent_path() / "eval.jsonl", {r});
    } else if (*sweep) {
      const auto reports = cmd_sweep_density(checkpoint, densities, eval_options());
      for (const auto& r : reports) print_report(r);
      append_reports(std::filesystem::path(checkpoint).parent_path() / "eval.jsonl", reports);
    } else if (*grad) {
      std::cout << format_grad_table(cmd_grad_report(checkpoint, batches, data_override()));
    } else if (*exp) {
      for (const auto& p : cmd_export(checkpoint, parse_export_kind(what), export_dir, data_override())) {
        std::cout << p.string() << '\n';
      }
    }
  } catch (const samlp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
