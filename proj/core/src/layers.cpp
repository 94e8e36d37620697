#include "samlp/layers.hpp"

#include <algorithm>
#include <cmath>

#include "samlp/error.hpp"
#include "samlp/shiftquant.hpp"

namespace samlp {

std::string_view to_string(LinearKind kind) {
  switch (kind) {
    case LinearKind::mul: return "mul";
    case LinearKind::shift: return "shift";
    case LinearKind::adder: return "adder";
  }
  return "?";
}

std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::mul: return "mul";
    case ParamKind::shift: return "shift";
    case ParamKind::adder: return "adder";
    case ParamKind::norm: return "norm";
  }
  return "?";
}

LinearKind parse_linear_kind(std::string_view name) {
  if (name == "mul") return LinearKind::mul;
  if (name == "shift") return LinearKind::shift;
  if (name == "adder" || name == "add") return LinearKind::adder;
  throw ConfigError("unknown linear kind '" + std::string(name) + "'");
}

ParamKind parse_param_kind(std::string_view name) {
  if (name == "mul") return ParamKind::mul;
  if (name == "shift") return ParamKind::shift;
  if (name == "adder" || name == "add") return ParamKind::adder;
  if (name == "norm") return ParamKind::norm;
  throw ConfigError("unknown parameter kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

ShiftCode quantize_shift_value(float w) {
  const float clamped = std::clamp(w, -1.0f, 1.0f);
  if (!(clamped != 0.0f)) return {1, static_cast<std::int8_t>(kMinShiftExponent)};  // zero or NaN
  const std::int8_t sign = clamped < 0.0f ? -1 : 1;
  // std::round is half away from zero
  const double exponent = std::round(std::log2(std::abs(static_cast<double>(clamped))));
  const int p = std::clamp(static_cast<int>(exponent), kMinShiftExponent, kMaxShiftExponent);
  return {sign, static_cast<std::int8_t>(p)};
}

float shift_code_value(ShiftCode code) {
  return static_cast<float>(code.sign) * std::ldexp(1.0f, code.exponent);
}

ShiftQuantized quantize_shift(const Tensor& w_raw) {
  ShiftQuantized q{w_raw.shape(), {}, {}, Tensor(w_raw.shape())};
  q.sign.resize(w_raw.size());
  q.exponent.resize(w_raw.size());
  for (std::size_t k = 0; k < w_raw.size(); ++k) {
    const ShiftCode code = quantize_shift_value(w_raw[k]);
    q.sign[k] = code.sign;
    q.exponent[k] = code.exponent;
    q.weights[k] = shift_code_value(code);
  }
  return q;
}

// ---------------------------------------------------------------------------

namespace {

void require_grad_shapes(const Tensor& dy, const Tensor& x, const Tensor& w, const char* op) {
  if (w.rank() != 2 || x.cols() != w.dim(1) || dy.cols() != w.dim(0) || dy.rows() != x.rows()) {
    throw DimensionError(std::string(op) + ": gradient " + shape_to_string(dy.shape()) + " / input " +
                         shape_to_string(x.shape()) + " / weight " + shape_to_string(w.shape()) +
                         " are inconsistent");
  }
}

// dx[r, i] = sum_o dy[r, o] * w[o, i]
Tensor input_grad_affine(const Tensor& dy, const Tensor& x, const Tensor& w) {
  const std::size_t rows = x.rows(), c_in = w.dim(1), c_out = w.dim(0);
  Tensor dx(x.shape());
  std::vector<double> acc(c_in);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* dyr = dy.data().data() + r * c_out;
    for (std::size_t o = 0; o < c_out; ++o) {
      const double d = dyr[o];
      if (d == 0.0) continue;
      const float* wrow = w.data().data() + o * c_in;
      for (std::size_t i = 0; i < c_in; ++i) acc[i] += d * wrow[i];
    }
    float* dxr = dx.data().data() + r * c_in;
    for (std::size_t i = 0; i < c_in; ++i) dxr[i] = static_cast<float>(acc[i]);
  }
  return dx;
}

// dw[o, i] = sum_r dy[r, o] * x[r, i], summed in ascending row order
Tensor weight_grad_affine(const Tensor& dy, const Tensor& x, std::size_t c_out) {
  const std::size_t rows = x.rows(), c_in = x.cols();
  std::vector<double> acc(c_out * c_in, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* dyr = dy.data().data() + r * c_out;
    const float* xr = x.data().data() + r * c_in;
    for (std::size_t o = 0; o < c_out; ++o) {
      const double d = dyr[o];
      if (d == 0.0) continue;
      double* arow = acc.data() + o * c_in;
      for (std::size_t i = 0; i < c_in; ++i) arow[i] += d * xr[i];
    }
  }
  Tensor dw({c_out, c_in});
  for (std::size_t k = 0; k < acc.size(); ++k) dw[k] = static_cast<float>(acc[k]);
  return dw;
}

Tensor column_sums(const Tensor& dy) {
  const std::size_t rows = dy.rows(), cols = dy.cols();
  std::vector<double> acc(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = dy.data().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc[c] += row[c];
  }
  Tensor out({cols});
  for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<float>(acc[c]);
  return out;
}

}  // namespace

LinearGrads mul_backward(const Tensor& dy, const Tensor& x, const Tensor& w, bool with_bias) {
  require_grad_shapes(dy, x, w, "mul_backward");
  LinearGrads g{input_grad_affine(dy, x, w), weight_grad_affine(dy, x, w.dim(0)), {}};
  if (with_bias) g.dbias = column_sums(dy);
  return g;
}

LinearGrads shift_backward(const Tensor& dy, const Tensor& x, const Tensor& w_q) {
  require_grad_shapes(dy, x, w_q, "shift_backward");
  return {input_grad_affine(dy, x, w_q), weight_grad_affine(dy, x, w_q.dim(0)), {}};
}

LinearGrads adder_backward(const Tensor& dy, const Tensor& x, const Tensor& w) {
  require_grad_shapes(dy, x, w, "adder_backward");
  const std::size_t rows = x.rows(), c_in = w.dim(1), c_out = w.dim(0);
  std::vector<double> wd(w.data().begin(), w.data().end());
  std::vector<double> dw_acc(c_out * c_in, 0.0);
  std::vector<double> dx_acc(c_in);
  Tensor dx(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(dx_acc.begin(), dx_acc.end(), 0.0);
    const float* dyr = dy.data().data() + r * c_out;
    const float* xr = x.data().data() + r * c_in;
    for (std::size_t o = 0; o < c_out; ++o) {
      const double d = dyr[o];
      if (d == 0.0) continue;
      const double* wrow = wd.data() + o * c_in;
      double* arow = dw_acc.data() + o * c_in;
      for (std::size_t i = 0; i < c_in; ++i) {
        const double diff = static_cast<double>(xr[i]) - wrow[i];
        arow[i] += d * diff;
        dx_acc[i] -= d * std::min(std::max(diff, -1.0), 1.0);
      }
    }
    float* dxr = dx.data().data() + r * c_in;
    for (std::size_t i = 0; i < c_in; ++i) dxr[i] = static_cast<float>(dx_acc[i]);
  }
  Tensor dw({c_out, c_in});
  for (std::size_t k = 0; k < dw_acc.size(); ++k) dw[k] = static_cast<float>(dw_acc[k]);
  return {std::move(dx), std::move(dw), {}};
}

// ---------------------------------------------------------------------------

void LinearLayer::require_input(const Tensor& x) const {
  if (x.rank() < 1 || x.cols() != in_features()) {
    throw DimensionError(std::string(name()) + " layer: input " + shape_to_string(x.shape()) +
                         " does not match weight " + shape_to_string(weight_.shape()));
  }
}

Tensor LinearLayer::take_input() {
  if (!saved_input_) throw UsageError(std::string(name()) + " layer: backward without a pending forward");
  Tensor x = std::move(*saved_input_);
  saved_input_.reset();
  return x;
}

namespace {

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

MulLinear::MulLinear(std::size_t in, std::size_t out, bool with_bias) : LinearLayer(in, out) {
  if (with_bias) {
    bias_ = Tensor({out});
    bias_grad_ = Tensor({out});
  }
}

void MulLinear::init(Rng& rng) {
  init_uniform_fan_in(weight_, in_features(), rng);
  if (has_bias()) init_uniform_fan_in(bias_, in_features(), rng);
}

Tensor MulLinear::forward(const Tensor& x, Mode) {
  require_input(x);
  Tensor y = affine_map(x, weight_, has_bias() ? &bias_ : nullptr);
  saved_input_ = x;
  return y;
}

Tensor MulLinear::backward(const Tensor& dy) {
  const Tensor x = take_input();
  LinearGrads g = mul_backward(dy, x, weight_, has_bias());
  weight_grad_ = std::move(g.dw);
  if (has_bias()) bias_grad_ = std::move(g.dbias);
  return std::move(g.dx);
}

std::vector<ParamRef> MulLinear::params(const std::string& prefix) {
  std::vector<ParamRef> out{{prefix + "weight", ParamKind::mul, &weight_, &weight_grad_, false}};
  if (has_bias()) out.push_back({prefix + "bias", ParamKind::mul, &bias_, &bias_grad_, true});
  return out;
}

void ShiftLinear::init(Rng& rng) { init_uniform_fan_in(weight_, in_features(), rng); }

void ShiftLinear::install_fixed_path(std::vector<std::uint8_t> codes) {
  if (codes.size() != weight_.size()) {
    throw DimensionError("shift layer: " + std::to_string(codes.size()) + " codes for weight " +
                         shape_to_string(weight_.shape()));
  }
  fixed_ = ShiftFixedPath{std::move(codes), 0};
}

Tensor ShiftLinear::forward(const Tensor& x, Mode mode) {
  require_input(x);
  if (mode == Mode::eval && fixed_) {
    std::vector<std::int32_t> xq(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) xq[k] = to_fixed(x[k]);
    FixedAffineResult res = fixed_shift_affine(xq, x.rows(), in_features(), fixed_->codes, out_features());
    fixed_->saturations += res.saturations;
    Shape shape = x.shape();
    shape.back() = out_features();
    Tensor y(std::move(shape));
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = from_fixed(res.values[k]);
    return y;
  }
  ShiftQuantized q = quantize_shift(weight_);
  Tensor y = affine_map(x, q.weights);
  saved_input_ = x;
  saved_quantized_ = std::move(q.weights);
  return y;
}

Tensor ShiftLinear::backward(const Tensor& dy) {
  const Tensor x = take_input();
  const Tensor w_q = std::move(*saved_quantized_);
  saved_quantized_.reset();
  LinearGrads g = shift_backward(dy, x, w_q);
  weight_grad_ = std::move(g.dw);
  return std::move(g.dx);
}

std::vector<ParamRef> ShiftLinear::params(const std::string& prefix) {
  return {{prefix + "weight", ParamKind::shift, &weight_, &weight_grad_, false}};
}

void AdderLinear::init(Rng& rng) {
  for (auto& v : weight_.data()) {
    double s;
    do {
      s = rng.normal(0.0, 1.0);
    } while (s < -2.0 || s > 2.0);
    v = static_cast<float>(s);
  }
}

Tensor AdderLinear::forward(const Tensor& x, Mode) {
  require_input(x);
  Tensor y = pairwise_l1_neg(x, weight_);
  saved_input_ = x;
  return y;
}

Tensor AdderLinear::backward(const Tensor& dy) {
  const Tensor x = take_input();
  LinearGrads g = adder_backward(dy, x, weight_);
  weight_grad_ = std::move(g.dw);
  return std::move(g.dx);
}

std::vector<ParamRef> AdderLinear::params(const std::string& prefix) {
  return {{prefix + "weight", ParamKind::adder, &weight_, &weight_grad_, false}};
}

std::unique_ptr<LinearLayer> make_linear(LinearKind kind, std::size_t in, std::size_t out, Rng& rng) {
  switch (kind) {
    case LinearKind::mul: {
      auto l = std::make_unique<MulLinear>(in, out, true);
      l->init(rng);
      return l;
    }
    case LinearKind::shift: {
      auto l = std::make_unique<ShiftLinear>(in, out);
      l->init(rng);
      return l;
    }
    case LinearKind::adder: {
      auto l = std::make_unique<AdderLinear>(in, out);
      l->init(rng);
      return l;
    }
  }
  throw ConfigError("unknown linear kind");
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels)
    : gamma_({channels}, 1.0f),
      beta_({channels}, 0.0f),
      gamma_grad_({channels}),
      beta_grad_({channels}),
      running_mean_({channels}, 0.0f),
      running_var_({channels}, 1.0f) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  const std::size_t c = channels();
  if (x.rank() < 1 || x.cols() != c) {
    throw DimensionError("batch_norm: input " + shape_to_string(x.shape()) + " does not have " +
                         std::to_string(c) + " channels");
  }
  const std::size_t rows = x.rows();
  Context ctx{mode, Tensor(x.shape()), std::vector<double>(c)};
  std::vector<double> mean(c, 0.0), var(c, 0.0);

  if (mode == Mode::train) {
    if (rows < 2) {
      throw DegenerateBatchError("batch_norm: " + std::to_string(rows) +
                                 " element(s) per channel; variance is undefined");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = x.data().data() + r * c;
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = x.data().data() + r * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = row[ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double biased = var[ch] / static_cast<double>(rows);
      const double unbiased = var[ch] / static_cast<double>(rows - 1);
      var[ch] = biased;
      running_mean_[ch] = static_cast<float>((1.0 - kMomentum) * running_mean_[ch] + kMomentum * mean[ch]);
      running_var_[ch] = static_cast<float>((1.0 - kMomentum) * running_var_[ch] + kMomentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean_[ch];
      var[ch] = running_var_[ch];
    }
  }

  for (std::size_t ch = 0; ch < c; ++ch) ctx.inv_std[ch] = 1.0 / std::sqrt(var[ch] + kEpsilon);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = x.data().data() + r * c;
    float* nrow = ctx.normalized.data().data() + r * c;
    float* yrow = y.data().data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double xhat = (row[ch] - mean[ch]) * ctx.inv_std[ch];
      nrow[ch] = static_cast<float>(xhat);
      yrow[ch] = static_cast<float>(gamma_[ch] * xhat + beta_[ch]);
    }
  }
  ctx_ = std::move(ctx);
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  if (!ctx_) throw UsageError("batch_norm: backward without a pending forward");
  Context ctx = std::move(*ctx_);
  ctx_.reset();
  const std::size_t c = channels();
  if (dy.shape() != ctx.normalized.shape()) {
    throw DimensionError("batch_norm: gradient " + shape_to_string(dy.shape()) + " vs forward " +
                         shape_to_string(ctx.normalized.shape()));
  }
  const std::size_t rows = dy.rows();
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy.data().data() + r * c;
    const float* n = ctx.normalized.data().data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      sum_dy[ch] += g[ch];
      sum_dy_xhat[ch] += static_cast<double>(g[ch]) * n[ch];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    gamma_grad_[ch] = static_cast<float>(sum_dy_xhat[ch]);
    beta_grad_[ch] = static_cast<float>(sum_dy[ch]);
  }

  Tensor dx(dy.shape());
  const double count = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy.data().data() + r * c;
    const float* n = ctx.normalized.data().data() + r * c;
    float* out = dx.data().data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double scale = gamma_[ch] * ctx.inv_std[ch];
      if (ctx.mode == Mode::eval) {
        out[ch] = static_cast<float>(scale * g[ch]);
      } else {
        out[ch] = static_cast<float>(scale * (g[ch] - sum_dy[ch] / count - n[ch] * sum_dy_xhat[ch] / count));
      }
    }
  }
  return dx;
}

std::vector<ParamRef> BatchNorm::params(const std::string& prefix) {
  return {{prefix + "gamma", ParamKind::norm, &gamma_, &gamma_grad_, false},
          {prefix + "beta", ParamKind::norm, &beta_, &beta_grad_, false}};
}

std::vector<BufferRef> BatchNorm::buffers(const std::string& prefix) {
  return {{prefix + "running_mean", &running_mean_}, {prefix + "running_var", &running_var_}};
}

Tensor Relu::forward(const Tensor& x, Mode) {
  Tensor y(x.shape());
  std::vector<std::uint8_t> active(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    active[k] = x[k] > 0.0f;
    y[k] = x[k] > 0.0f ? x[k] : 0.0f;
  }
  active_ = std::move(active);
  return y;
}

Tensor Relu::backward(const Tensor& dy) {
  if (!active_) throw UsageError("relu: backward without a pending forward");
  if (active_->size() != dy.size()) throw DimensionError("relu: gradient size does not match forward");
  Tensor dx(dy.shape());
  for (std::size_t k = 0; k < dy.size(); ++k) dx[k] = (*active_)[k] ? dy[k] : 0.0f;
  active_.reset();
  return dx;
}

Tensor MaxPool::forward(const Tensor& x, Mode) {
  MaxPoolResult res = global_max_pool(x);
  ctx_ = Context{std::move(res.argmax), x.dim(1)};
  return std::move(res.values);
}

Tensor MaxPool::backward(const Tensor& dy) {
  if (!ctx_) throw UsageError("max_pool: backward without a pending forward");
  Context ctx = std::move(*ctx_);
  ctx_.reset();
  return global_max_pool_backward(dy, ctx.argmax, ctx.points);
}

Tensor concat_coords(const Tensor& features, const Tensor& points) {
  if (features.rank() != 3 || points.rank() != 3 || points.dim(2) != 3 || features.dim(0) != points.dim(0) ||
      features.dim(1) != points.dim(1)) {
    throw DimensionError("concat_coords: features " + shape_to_string(features.shape()) + " vs points " +
                         shape_to_string(points.shape()));
  }
  const std::size_t rows = features.rows(), c = features.dim(2);
  Tensor out({features.dim(0), features.dim(1), c + 3});
  for (std::size_t r = 0; r < rows; ++r) {
    float* dst = out.data().data() + r * (c + 3);
    std::copy_n(features.data().data() + r * c, c, dst);
    std::copy_n(points.data().data() + r * 3, 3, dst + c);
  }
  return out;
}

Tensor concat_coords_backward(const Tensor& dy, std::size_t feature_channels) {
  if (dy.rank() != 3 || dy.dim(2) != feature_channels + 3) {
    throw DimensionError("concat_coords_backward: gradient " + shape_to_string(dy.shape()) + " vs " +
                         std::to_string(feature_channels) + " feature channels");
  }
  const std::size_t rows = dy.rows(), c = feature_channels;
  Tensor dx({dy.dim(0), dy.dim(1), c});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(dy.data().data() + r * (c + 3), c, dx.data().data() + r * c);
  }
  return dx;
}

}  // namespace samlp
