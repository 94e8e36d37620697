#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace samlp {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major single-precision tensor. Owns its storage; there are no
/// strided views, so reshapes and slices always copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  /// Convenience for literals in tests: `Tensor::of({1, 2}, {3.f, 4.f})`.
  static Tensor of(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Number of rows once every dimension but the last is flattened.
  std::size_t rows() const noexcept;
  /// Size of the last dimension (0 for a rank-0 tensor).
  std::size_t cols() const noexcept;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(float value) noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// out[..., o] = sum_i w[o, i] * x[..., i] + bias[o]. Leading dimensions of `x`
/// are treated as independent rows. Accumulation is done in double.
Tensor affine_map(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

/// out[..., o] = -sum_i |x[..., i] - w[o, i]|.
Tensor pairwise_l1_neg(const Tensor& x, const Tensor& w);

struct MaxPoolResult {
  Tensor values;                      // [b, c]
  std::vector<std::uint32_t> argmax;  // b * c point indices
};

/// Channel-wise maximum over the point axis of a [b, n, c] tensor. Ties go to
/// the lowest point index.
MaxPoolResult global_max_pool(const Tensor& x);

/// Routes pooled gradients [b, c] back to the winning points of a [b, n, c]
/// input.
Tensor global_max_pool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax,
                                std::size_t points);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean negative log-softmax over the batch; dlogits = (softmax - onehot) / b.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Square root of the mean squared element. Zero for an empty tensor.
double rms(std::span<const float> values);

}  // namespace samlp
