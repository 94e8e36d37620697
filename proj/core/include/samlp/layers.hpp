#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "samlp/rng.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

enum class Mode { train, eval };

/// Family of a linear layer: multiply-accumulate, power-of-two shift, or
/// negative-L1 adder.
enum class LinearKind { mul, shift, adder };

/// What kind of layer a trainable tensor belongs to. Drives optimizer routing.
enum class ParamKind { mul, shift, adder, norm };

std::string_view to_string(LinearKind kind);
std::string_view to_string(ParamKind kind);
LinearKind parse_linear_kind(std::string_view name);
ParamKind parse_param_kind(std::string_view name);

struct ParamRef {
  std::string name;
  ParamKind kind;
  Tensor* value;
  Tensor* grad;
  bool is_bias = false;
};

// Non-trainable state that still has to be checkpointed (running statistics).
struct BufferRef {
  std::string name;
  Tensor* value;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Consumes the context saved by the last forward. Calling it twice, or
  /// without a forward, raises UsageError.
  virtual Tensor backward(const Tensor& dy) = 0;

  virtual std::vector<ParamRef> params(const std::string& /*prefix*/) { return {}; }
  virtual std::vector<BufferRef> buffers(const std::string& /*prefix*/) { return {}; }
  virtual std::string_view name() const = 0;
};

// ---------------------------------------------------------------------------
// Shift quantization

inline constexpr int kMinShiftExponent = -15;
inline constexpr int kMaxShiftExponent = 0;

/// Signed power-of-two image of a float weight tensor.
struct ShiftQuantized {
  Shape shape;
  std::vector<std::int8_t> sign;      // +1 or -1
  std::vector<std::int8_t> exponent;  // in [-15, 0]
  Tensor weights;                     // sign * 2^exponent
};

/// Clamps to [-1, 1], then sign / round(log2|w|) with rounding half away from
/// zero and the exponent clamped to [-15, 0]. Zero maps to +2^-15.
ShiftQuantized quantize_shift(const Tensor& w_raw);

/// Quantizes a single value; exposed for oracles and exhaustive checks.
struct ShiftCode {
  std::int8_t sign;
  std::int8_t exponent;
  friend bool operator==(const ShiftCode&, const ShiftCode&) = default;
};
ShiftCode quantize_shift_value(float w);
float shift_code_value(ShiftCode code);

// ---------------------------------------------------------------------------
// Gradient rules as free functions over saved forward state. The layer classes
// below are thin owners around these.

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor dbias;  // empty unless the layer has a bias
};

/// Exact affine gradients: dx = dy . w, dw = dy^T . x, dbias = column sums.
LinearGrads mul_backward(const Tensor& dy, const Tensor& x, const Tensor& w, bool with_bias);

/// Straight-through rule: dx = dy . w_q, dw = dy^T . x (quantizer treated as
/// identity for the master weights).
LinearGrads shift_backward(const Tensor& dy, const Tensor& x, const Tensor& w_q);

/// Smoothed adder gradients: dw = sum dy * (x - w); dx = -sum dy * clip(x - w)
/// with clip saturating at +-1.
LinearGrads adder_backward(const Tensor& dy, const Tensor& x, const Tensor& w);

/// HardTanh clip applied to the adder input gradient.
inline double adder_clip(double v) { return v > 1.0 ? 1.0 : (v < -1.0 ? -1.0 : v); }

// ---------------------------------------------------------------------------

/// Common base for the three linear families. Weight is [c_out, c_in].
class LinearLayer : public Layer {
 public:
  LinearLayer(std::size_t in, std::size_t out) : weight_({out, in}), weight_grad_({out, in}) {}

  virtual LinearKind kind() const = 0;
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& weight_grad() const noexcept { return weight_grad_; }

 protected:
  void require_input(const Tensor& x) const;
  Tensor take_input();

  Tensor weight_;
  Tensor weight_grad_;
  std::optional<Tensor> saved_input_;
};

class MulLinear final : public LinearLayer {
 public:
  MulLinear(std::size_t in, std::size_t out, bool with_bias = true);

  /// Uniform in [-1/sqrt(in), 1/sqrt(in)] for weight and bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params(const std::string& prefix) override;
  std::string_view name() const override { return "mul"; }
  LinearKind kind() const override { return LinearKind::mul; }

  bool has_bias() const noexcept { return !bias_.empty(); }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias_grad() const noexcept { return bias_grad_; }

 private:
  Tensor bias_;
  Tensor bias_grad_;
};

/// Codes consulted by a shift layer when it runs its integer path.
struct ShiftFixedPath {
  std::vector<std::uint8_t> codes;  // one 5-bit code per weight, unpacked
  std::uint64_t saturations = 0;
};

class ShiftLinear final : public LinearLayer {
 public:
  ShiftLinear(std::size_t in, std::size_t out) : LinearLayer(in, out) {}

  /// Same bound as MulLinear, which keeps weights inside the +-1 clamp.
  void init(Rng& rng);

  /// Re-quantizes from the master weights, then applies the quantized affine
  /// map. In eval mode with a fixed path installed, runs the Q16.16 kernel.
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params(const std::string& prefix) override;
  std::string_view name() const override { return "shift"; }
  LinearKind kind() const override { return LinearKind::shift; }

  /// Quantized image of the current master weights.
  ShiftQuantized quantized() const { return quantize_shift(weight_); }

  void install_fixed_path(std::vector<std::uint8_t> codes);
  void clear_fixed_path() { fixed_.reset(); }
  const std::optional<ShiftFixedPath>& fixed_path() const noexcept { return fixed_; }

 private:
  std::optional<Tensor> saved_quantized_;
  std::optional<ShiftFixedPath> fixed_;
};

class AdderLinear final : public LinearLayer {
 public:
  AdderLinear(std::size_t in, std::size_t out) : LinearLayer(in, out) {}

  /// Normal(0, 1) truncated to [-2, 2], matching the scale of normalized
  /// inputs.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params(const std::string& prefix) override;
  std::string_view name() const override { return "adder"; }
  LinearKind kind() const override { return LinearKind::adder; }
};

std::unique_ptr<LinearLayer> make_linear(LinearKind kind, std::size_t in, std::size_t out, Rng& rng);

/// Per-channel batch normalization over every non-channel dimension.
class BatchNorm final : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm(std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params(const std::string& prefix) override;
  std::vector<BufferRef> buffers(const std::string& prefix) override;
  std::string_view name() const override { return "batch_norm"; }

  std::size_t channels() const noexcept { return gamma_.size(); }
  Tensor& gamma() noexcept { return gamma_; }
  Tensor& beta() noexcept { return beta_; }
  Tensor& running_mean() noexcept { return running_mean_; }
  Tensor& running_var() noexcept { return running_var_; }
  const Tensor& gamma_grad() const noexcept { return gamma_grad_; }
  const Tensor& beta_grad() const noexcept { return beta_grad_; }

 private:
  struct Context {
    Mode mode;
    Tensor normalized;            // x_hat
    std::vector<double> inv_std;  // per channel
  };

  Tensor gamma_, beta_, gamma_grad_, beta_grad_;
  Tensor running_mean_, running_var_;
  std::optional<Context> ctx_;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::string_view name() const override { return "relu"; }

 private:
  std::optional<std::vector<std::uint8_t>> active_;
};

/// Max over axis 1 of [b, n, c], producing [b, c].
class MaxPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::string_view name() const override { return "max_pool"; }

 private:
  struct Context {
    std::vector<std::uint32_t> argmax;
    std::size_t points;
  };
  std::optional<Context> ctx_;
};

/// [b, n, c] ++ [b, n, 3] -> [b, n, c + 3], coordinates last.
Tensor concat_coords(const Tensor& features, const Tensor& points);
/// Gradient of concat_coords with respect to the feature part.
Tensor concat_coords_backward(const Tensor& dy, std::size_t feature_channels);

}  // namespace samlp
