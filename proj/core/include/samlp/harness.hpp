#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "samlp/checkpoint.hpp"
#include "samlp/data.hpp"
#include "samlp/models.hpp"
#include "samlp/run_config.hpp"

namespace samlp {

/// One line of metrics.jsonl.
struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::map<std::string, double> grad_rms;       // backbone layer -> mean raw gradient RMS
  std::map<std::string, double> learning_rates;  // optimizer -> lr in effect
  std::uint64_t zero_gradient_events = 0;
  double seconds = 0.0;
};

std::string to_json_line(const MetricsRecord& m);
MetricsRecord metrics_from_json_line(const std::string& line);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

SplitDataset load_dataset(const RunConfig& cfg);

/// Stacks samples into a [b, n, 3] batch.
Tensor make_batch(const std::vector<const Sample*>& samples);

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<MetricsRecord> metrics;
  double final_test_accuracy = 0.0;
};

/// Trains into cfg.out_dir: config.ini (written first), manifest.json,
/// metrics.jsonl, last.ckpt and best.ckpt. Raises NonFiniteError naming the
/// first offending layer if the loss stops being finite.
TrainResult cmd_train(const RunConfig& cfg, std::ostream* log = nullptr);

struct EvalOptions {
  std::optional<DataSpec> data;        // defaults to the checkpoint's own source
  std::optional<std::size_t> density;  // points per cloud; defaults to all
  std::uint64_t subsample_seed = 1234;
  bool nested = false;                 // reuse one permutation across densities
  std::optional<std::filesystem::path> packed_shift_dir;  // run shift layers in Q16.16
};

struct EvalReport {
  std::size_t density = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::uint64_t saturations = 0;
};

std::string to_json_line(const EvalReport& r);

/// Accuracy of a model on a split, augmentation-free.
EvalReport evaluate(Model& model, const Dataset& split, const EvalOptions& opts, std::size_t batch_size);

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const EvalOptions& opts);

/// Densities default to points_per_cloud divided by 1, 2, 4 and 8.
std::vector<EvalReport> cmd_sweep_density(const std::filesystem::path& checkpoint, std::vector<std::size_t> densities,
                                          const EvalOptions& opts);

struct GradRow {
  std::string layer;
  LinearKind kind;
  double raw_rms = 0.0;
  std::optional<double> modulated_rms;  // adder layers only
};

/// Mean weight-gradient RMS of each embedding/encoder layer over the first
/// `batches` training batches (fixed order, no augmentation, no updates).
std::vector<GradRow> cmd_grad_report(const std::filesystem::path& checkpoint, std::size_t batches,
                                     std::optional<DataSpec> data = std::nullopt);
std::string format_grad_table(const std::vector<GradRow>& rows);

enum class ExportKind { weights_hist, features, packed_shift };
ExportKind parse_export_kind(std::string_view name);

/// Writes the requested artefacts under out_dir and returns their paths.
/// Raises ConfigError for packed_shift on a model without shift layers.
std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& checkpoint, ExportKind what,
                                              const std::filesystem::path& out_dir,
                                              std::optional<DataSpec> data = std::nullopt);

/// Loads <dir>/<layer>.saq1 for every shift layer and switches the model's
/// eval forward to the integer path.
void install_packed_shift(Model& model, const std::filesystem::path& dir);

}  // namespace samlp
