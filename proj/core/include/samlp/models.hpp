#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "samlp/layers.hpp"
#include "samlp/rng.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

enum class Variant { mul, shift, add, sa };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::sa;
  std::vector<std::size_t> embed_widths{64, 64, 128, 256};
  std::vector<std::size_t> encoder_widths{512, 1024};
  std::vector<std::size_t> head_widths{512, 256};
  std::size_t num_classes = 40;
  std::size_t knn_k = 16;
  std::size_t points_in = 1024;
  LinearKind head_kind = LinearKind::mul;

  /// Reduced widths used for the synthetic desk-scale runs.
  static ModelConfig desk(Variant variant);

  /// Raises ConfigError for an invalid width or count.
  void validate() const;
};

/// Linear-layer kind at each of the 4 embedding and 2 encoder positions.
std::vector<LinearKind> backbone_kinds(Variant variant);

/// For every point, the indices of its k nearest neighbours (self first, ties
/// to the lower index). Output is [b, n, k] flattened.
std::vector<std::uint32_t> knn_group(const Tensor& points, std::size_t k);

/// Per-neighbour features [neighbour - centre, centre], shape [b, n * k, 6].
Tensor local_features(const Tensor& points, const std::vector<std::uint32_t>& neighbours, std::size_t k);

/// Unit-sphere point-cloud classifier: local embedding, coordinate-concatenating
/// encoder, global max pool, multiplication-based head.
class Model {
 public:
  struct Output {
    Tensor logits;  // [b, num_classes]
    Tensor pooled;  // [b, encoder_widths.back()]
  };

  Model(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }

  Output forward(const Tensor& points, Mode mode);
  /// Backpropagates from the logits, leaving gradients in every parameter.
  void backward(const Tensor& dlogits);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();

  /// Embedding then encoder linear layers in depth order, with their names.
  std::vector<std::pair<std::string, LinearLayer*>> backbone();
  std::vector<std::pair<std::string, ShiftLinear*>> shift_layers();

  /// Linear layers in the whole network, head included.
  std::size_t linear_layer_count() const;
  std::size_t parameter_count(bool include_bias) ;

  /// Name of the first block whose output in the last forward was not finite.
  const std::optional<std::string>& first_nonfinite() const noexcept { return first_nonfinite_; }

 private:
  struct Block {
    std::string name;
    std::unique_ptr<LinearLayer> linear;
    std::unique_ptr<BatchNorm> norm;
    Relu relu;

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& dy);
  };

  Tensor run_block(Block& block, const Tensor& x, Mode mode);

  ModelConfig cfg_;
  std::vector<Block> embed_;
  std::vector<Block> encoder_;
  std::vector<Block> head_;
  std::unique_ptr<LinearLayer> classifier_;
  MaxPool neighbour_pool_;
  MaxPool global_pool_;

  // shapes remembered between forward and backward
  std::size_t batch_ = 0, points_ = 0;
  std::optional<std::string> first_nonfinite_;
};

}  // namespace samlp
