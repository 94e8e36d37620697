#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "samlp/rng.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

/// Triangle mesh read from an OFF file; polygons are fan-triangulated.
struct MeshOff {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

MeshOff parse_off(std::istream& in);
MeshOff read_off(const std::filesystem::path& path);

/// Area-proportional surface sampling, uniform within each triangle.
/// Returns [n, 3]. Raises IngestionError for a mesh with zero total area.
Tensor sample_mesh(const MeshOff& mesh, std::size_t n, Rng& rng);

/// Subtracts the centroid and scales the farthest point to radius 1.
Tensor normalize_cloud(const Tensor& points);

/// Uniform subset of m points without replacement, [m, 3].
Tensor subsample_density(const Tensor& points, std::size_t m, Rng& rng);

struct AugmentConfig {
  bool enabled = true;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double max_shift = 0.1;
};

/// Per-axis random scale and translation. Identity when disabled.
Tensor augment(const Tensor& points, Rng& rng, const AugmentConfig& cfg = {});

struct Sample {
  Tensor points;  // [n, 3]
  int label = 0;
  std::uint32_t id = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  std::size_t points_per_cloud = 0;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

/// Which samples went where, for provenance.
struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> test_ids;
  std::size_t points_per_cloud = 0;
  std::uint64_t seed = 0;
};

DatasetManifest make_manifest(const SplitDataset& data, std::uint64_t seed);

// Synthetic desk-scale shapes ------------------------------------------------

inline constexpr double kSynthJitter = 0.01;

/// Class names in label order.
const std::vector<std::string>& synth_class_names();

/// One jittered, unnormalized sample of the given class. Jitter is Gaussian
/// with sigma 0.01 per axis, its norm truncated at 3 sigma.
Tensor synth_shape_raw(int label, std::size_t n_points, Rng& rng);

/// num_per_class normalized samples per class, split 80/20 per class.
/// Raises RangeError when n_points < 64.
SplitDataset synth_shapes(std::size_t num_per_class, std::size_t n_points, std::uint64_t seed);

// Binary cache ---------------------------------------------------------------

std::vector<std::uint8_t> encode_cache(const Dataset& data);
/// Raises CorruptFileError on truncation or checksum mismatch.
Dataset decode_cache(std::span<const std::uint8_t> bytes);
void cache_write(const Dataset& data, const std::filesystem::path& path);
Dataset cache_read(const std::filesystem::path& path);

// ModelNet40 -------------------------------------------------------------------

/// Reads <root>/<class>/{train,test}/*.off, sampling each mesh once into
/// <cache_dir>/{train,test}.sapc. Classes are ordered lexicographically.
SplitDataset load_modelnet40(const std::filesystem::path& root, const std::filesystem::path& cache_dir,
                             std::size_t points_per_cloud, std::uint64_t seed);

}  // namespace samlp
