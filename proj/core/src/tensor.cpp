#include "samlp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "samlp/error.hpp"

namespace samlp {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::of(Shape shape, std::initializer_list<float> values) {
  return Tensor(std::move(shape), std::vector<float>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(float value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

namespace {

void require_inner_match(const Tensor& x, const Tensor& w, const char* op) {
  if (w.rank() != 2 || x.rank() < 1 || x.cols() != w.dim(1)) {
    throw DimensionError(std::string(op) + ": input " + shape_to_string(x.shape()) +
                         " incompatible with weight " + shape_to_string(w.shape()));
  }
}

Shape replace_last(Shape shape, std::size_t last) {
  shape.back() = last;
  return shape;
}

// Transposed copy of a [c_out, c_in] weight so the inner loops run over the
// output channel with unit stride.
std::vector<double> transpose_to_double(const Tensor& w) {
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  std::vector<double> wt(c_out * c_in);
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < c_in; ++i) wt[i * c_out + o] = w[o * c_in + i];
  }
  return wt;
}

}  // namespace

Tensor affine_map(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_inner_match(x, w, "affine_map");
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  if (bias && bias->size() != c_out) {
    throw DimensionError("affine_map: bias " + shape_to_string(bias->shape()) + " does not match " +
                         std::to_string(c_out) + " outputs");
  }
  const std::vector<double> wt = transpose_to_double(w);
  const std::size_t rows = x.rows();
  Tensor out(replace_last(x.shape(), c_out));
  std::vector<double> acc(c_out);
  const float* xs = x.data().data();
  float* os = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* xr = xs + r * c_in;
    for (std::size_t i = 0; i < c_in; ++i) {
      const double xi = xr[i];
      const double* wrow = wt.data() + i * c_out;
      for (std::size_t o = 0; o < c_out; ++o) acc[o] += xi * wrow[o];
    }
    float* orow = os + r * c_out;
    if (bias) {
      for (std::size_t o = 0; o < c_out; ++o) orow[o] = static_cast<float>(acc[o] + (*bias)[o]);
    } else {
      for (std::size_t o = 0; o < c_out; ++o) orow[o] = static_cast<float>(acc[o]);
    }
  }
  return out;
}

Tensor pairwise_l1_neg(const Tensor& x, const Tensor& w) {
  require_inner_match(x, w, "pairwise_l1_neg");
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  const std::vector<double> wt = transpose_to_double(w);
  const std::size_t rows = x.rows();
  Tensor out(replace_last(x.shape(), c_out));
  std::vector<double> acc(c_out);
  const float* xs = x.data().data();
  float* os = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* xr = xs + r * c_in;
    for (std::size_t i = 0; i < c_in; ++i) {
      const double xi = xr[i];
      const double* wrow = wt.data() + i * c_out;
      for (std::size_t o = 0; o < c_out; ++o) acc[o] += std::abs(xi - wrow[o]);
    }
    float* orow = os + r * c_out;
    for (std::size_t o = 0; o < c_out; ++o) orow[o] = static_cast<float>(-acc[o]);
  }
  return out;
}

MaxPoolResult global_max_pool(const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError("global_max_pool expects [b, n, c], got " + shape_to_string(x.shape()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t c = x.dim(2);
  if (n == 0) throw EmptyInputError("global_max_pool: no points to pool over");

  MaxPoolResult res{Tensor({b, c}), std::vector<std::uint32_t>(b * c, 0)};
  for (std::size_t bi = 0; bi < b; ++bi) {
    const float* base = x.data().data() + bi * n * c;
    float* best = res.values.data().data() + bi * c;
    std::uint32_t* arg = res.argmax.data() + bi * c;
    std::copy(base, base + c, best);
    for (std::size_t p = 1; p < n; ++p) {
      const float* row = base + p * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        // strict comparison keeps the lowest index on ties
        if (row[ch] > best[ch]) {
          best[ch] = row[ch];
          arg[ch] = static_cast<std::uint32_t>(p);
        }
      }
    }
  }
  return res;
}

Tensor global_max_pool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, std::size_t points) {
  if (dy.rank() != 2 || argmax.size() != dy.size()) {
    throw DimensionError("global_max_pool_backward: gradient " + shape_to_string(dy.shape()) +
                         " does not match saved routing");
  }
  const std::size_t b = dy.dim(0);
  const std::size_t c = dy.dim(1);
  Tensor dx({b, points, c});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t k = bi * c + ch;
      dx[(bi * points + argmax[k]) * c + ch] = dy[k];
    }
  }
  return dx;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0);
  const std::size_t k = logits.dim(1);
  CrossEntropyResult res{0.0, Tensor(logits.shape())};
  if (b == 0) return res;
  std::vector<double> probs(k);
  double total = 0.0;
  for (std::size_t bi = 0; bi < b; ++bi) {
    const int label = labels[bi];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const float* row = logits.data().data() + bi * k;
    const double peak = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[j] = std::exp(static_cast<double>(row[j]) - peak);
      denom += probs[j];
    }
    total += std::log(denom) - (static_cast<double>(row[label]) - peak);
    float* grad = res.dlogits.data().data() + bi * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = static_cast<std::size_t>(label) == j ? 1.0 : 0.0;
      grad[j] = static_cast<float>((probs[j] / denom - onehot) / static_cast<double>(b));
    }
  }
  res.loss = total / static_cast<double>(b);
  return res;
}

double rms(std::span<const float> values) {
  if (values.empty()) return 0.0;
  double sq = 0.0;
  for (float v : values) sq += static_cast<double>(v) * v;
  return std::sqrt(sq / static_cast<double>(values.size()));
}

}  // namespace samlp
