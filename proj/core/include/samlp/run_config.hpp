#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "samlp/data.hpp"
#include "samlp/models.hpp"
#include "samlp/optim.hpp"

namespace samlp {

enum class DataKind { synthetic, modelnet40 };

struct DataSpec {
  DataKind kind = DataKind::synthetic;
  std::filesystem::path root;         // modelnet40 only
  std::size_t per_class = 160;        // synthetic only: 128 train + 32 test
  std::size_t points_per_cloud = 256;
  std::filesystem::path cache_dir;    // modelnet40 only; defaults to <out>/cache
};

/// Parses "synthetic" or "modelnet40:<dir>".
DataSpec parse_data_spec(const std::string& text);
std::string data_spec_string(const DataSpec& spec);

struct RunConfig {
  ModelConfig model;
  DataSpec data;
  int epochs = 60;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  RoutingTable routing = default_routing();
  AugmentConfig augment;
  std::filesystem::path out_dir = "runs/default";

  /// Defaults for a variant and data source: desk widths and 60 epochs for the
  /// synthetic set, full widths, 1024 points and 200 epochs for ModelNet40.
  static RunConfig defaults(Variant variant, const DataSpec& data);

  void validate() const;
};

/// INI text with [run], [data], [model], [augment] and one [optim.<kind>]
/// section per routed parameter kind.
std::string to_ini(const RunConfig& cfg);
/// Keys missing from the text keep the defaults implied by variant and data.
RunConfig from_ini(const std::string& text);

void write_config(const RunConfig& cfg, const std::filesystem::path& path);
RunConfig read_config(const std::filesystem::path& path);

}  // namespace samlp
