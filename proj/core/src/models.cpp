#include "samlp/models.hpp"

#include <algorithm>
#include <numeric>

#include "samlp/error.hpp"

namespace samlp {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::mul: return "mul";
    case Variant::shift: return "shift";
    case Variant::add: return "add";
    case Variant::sa: return "sa";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "mul") return Variant::mul;
  if (name == "shift") return Variant::shift;
  if (name == "add" || name == "adder") return Variant::add;
  if (name == "sa") return Variant::sa;
  throw ConfigError("unknown model variant '" + std::string(name) + "' (expected mul, shift, add or sa)");
}

ModelConfig ModelConfig::desk(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.embed_widths = {16, 16, 32, 32};
  cfg.encoder_widths = {64, 128};
  cfg.head_widths = {64};
  cfg.num_classes = 4;
  cfg.knn_k = 8;
  cfg.points_in = 256;
  return cfg;
}

void ModelConfig::validate() const {
  if (embed_widths.size() != 4) throw ConfigError("embedding needs exactly 4 widths");
  if (encoder_widths.size() != 2) throw ConfigError("encoder needs exactly 2 widths");
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t w) { return w > 0; });
  };
  if (!positive(embed_widths) || !positive(encoder_widths) || !positive(head_widths)) {
    throw ConfigError("layer widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (knn_k < 1) throw ConfigError("knn_k must be at least 1");
  if (points_in < knn_k) throw ConfigError("points_in must be >= knn_k");
}

std::vector<LinearKind> backbone_kinds(Variant variant) {
  switch (variant) {
    case Variant::mul: return std::vector<LinearKind>(6, LinearKind::mul);
    case Variant::shift: return std::vector<LinearKind>(6, LinearKind::shift);
    case Variant::add: return std::vector<LinearKind>(6, LinearKind::adder);
    case Variant::sa:
      return {LinearKind::shift, LinearKind::adder, LinearKind::shift,
              LinearKind::adder, LinearKind::shift, LinearKind::adder};
  }
  throw ConfigError("unknown variant");
}

std::vector<std::uint32_t> knn_group(const Tensor& points, std::size_t k) {
  if (points.rank() != 3 || points.dim(2) != 3) {
    throw DimensionError("knn_group expects [b, n, 3], got " + shape_to_string(points.shape()));
  }
  const std::size_t b = points.dim(0), n = points.dim(1);
  if (k > n) throw RangeError("knn_group: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  if (k == 0) throw RangeError("knn_group: k must be positive");

  std::vector<std::uint32_t> out(b * n * k);
  std::vector<double> dist(n);
  std::vector<std::uint32_t> order(n);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const float* pts = points.data().data() + bi * n * 3;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double diff = static_cast<double>(pts[j * 3 + a]) - pts[i * 3 + a];
          d += diff * diff;
        }
        dist[j] = d;
      }
      // self always first, remaining by (distance, index)
      std::iota(order.begin(), order.end(), 0u);
      std::swap(order[0], order[i]);
      auto less = [&](std::uint32_t a, std::uint32_t c) { return dist[a] < dist[c] || (dist[a] == dist[c] && a < c); };
      std::partial_sort(order.begin() + 1, order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
      std::copy_n(order.begin(), k, out.begin() + static_cast<std::ptrdiff_t>((bi * n + i) * k));
    }
  }
  return out;
}

Tensor local_features(const Tensor& points, const std::vector<std::uint32_t>& neighbours, std::size_t k) {
  const std::size_t b = points.dim(0), n = points.dim(1);
  if (neighbours.size() != b * n * k) throw DimensionError("local_features: neighbour table size mismatch");
  Tensor out({b, n * k, 6});
  for (std::size_t bi = 0; bi < b; ++bi) {
    const float* pts = points.data().data() + bi * n * 3;
    for (std::size_t i = 0; i < n; ++i) {
      const float* centre = pts + i * 3;
      for (std::size_t j = 0; j < k; ++j) {
        const float* nb = pts + neighbours[(bi * n + i) * k + j] * 3;
        float* dst = out.data().data() + ((bi * n + i) * k + j) * 6;
        for (int a = 0; a < 3; ++a) {
          dst[a] = nb[a] - centre[a];
          dst[3 + a] = centre[a];
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor Model::Block::forward(const Tensor& x, Mode mode) {
  return relu.forward(norm->forward(linear->forward(x, mode), mode), mode);
}

Tensor Model::Block::backward(const Tensor& dy) { return linear->backward(norm->backward(relu.backward(dy))); }

Model::Model(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto kinds = backbone_kinds(cfg_.variant);
  auto make_block = [&](std::string name, LinearKind kind, std::size_t in, std::size_t out) {
    Block blk{std::move(name), make_linear(kind, in, out, rng), std::make_unique<BatchNorm>(out), {}};
    return blk;
  };

  std::size_t in = 6;
  for (std::size_t i = 0; i < 4; ++i) {
    embed_.push_back(make_block("embed." + std::to_string(i), kinds[i], in, cfg_.embed_widths[i]));
    in = cfg_.embed_widths[i];
  }
  for (std::size_t i = 0; i < 2; ++i) {
    encoder_.push_back(make_block("encoder." + std::to_string(i), kinds[4 + i], in + 3, cfg_.encoder_widths[i]));
    in = cfg_.encoder_widths[i];
  }
  for (std::size_t i = 0; i < cfg_.head_widths.size(); ++i) {
    head_.push_back(make_block("head." + std::to_string(i), cfg_.head_kind, in, cfg_.head_widths[i]));
    in = cfg_.head_widths[i];
  }
  auto out = std::make_unique<MulLinear>(in, cfg_.num_classes, true);
  out->init(rng);
  classifier_ = std::move(out);
}

Tensor Model::run_block(Block& block, const Tensor& x, Mode mode) {
  Tensor y = block.forward(x, mode);
  if (!first_nonfinite_ && !y.all_finite()) first_nonfinite_ = block.name;
  return y;
}

Model::Output Model::forward(const Tensor& points, Mode mode) {
  if (points.rank() != 3 || points.dim(2) != 3) {
    throw DimensionError("model input must be [b, n, 3], got " + shape_to_string(points.shape()));
  }
  first_nonfinite_.reset();
  batch_ = points.dim(0);
  points_ = points.dim(1);
  const std::size_t k = cfg_.knn_k;

  Tensor h = local_features(points, knn_group(points, k), k);
  h = run_block(embed_[0], h, mode);
  h = run_block(embed_[1], h, mode);
  h = neighbour_pool_.forward(std::move(h).reshaped({batch_ * points_, k, cfg_.embed_widths[1]}), mode);
  h = std::move(h).reshaped({batch_, points_, cfg_.embed_widths[1]});
  h = run_block(embed_[2], h, mode);
  h = run_block(embed_[3], h, mode);
  for (auto& blk : encoder_) h = run_block(blk, concat_coords(h, points), mode);

  Output out;
  out.pooled = global_pool_.forward(h, mode);
  h = out.pooled;
  for (auto& blk : head_) h = run_block(blk, h, mode);
  out.logits = classifier_->forward(h, mode);
  if (!first_nonfinite_ && !out.logits.all_finite()) first_nonfinite_ = "head.out";
  return out;
}

void Model::backward(const Tensor& dlogits) {
  Tensor g = classifier_->backward(dlogits);
  for (auto it = head_.rbegin(); it != head_.rend(); ++it) g = it->backward(g);
  g = global_pool_.backward(g);
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    const std::size_t feature_channels = i == 0 ? cfg_.embed_widths[3] : cfg_.encoder_widths[i - 1];
    g = concat_coords_backward(encoder_[i].backward(g), feature_channels);
  }
  g = embed_[3].backward(g);
  g = embed_[2].backward(g);
  g = neighbour_pool_.backward(std::move(g).reshaped({batch_ * points_, cfg_.embed_widths[1]}));
  g = std::move(g).reshaped({batch_, points_ * cfg_.knn_k, cfg_.embed_widths[1]});
  g = embed_[1].backward(g);
  embed_[0].backward(g);  // input features are a fixed function of the points
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  auto add_block = [&](Block& blk) {
    for (auto& p : blk.linear->params(blk.name + ".linear.")) out.push_back(p);
    for (auto& p : blk.norm->params(blk.name + ".bn.")) out.push_back(p);
  };
  for (auto& b : embed_) add_block(b);
  for (auto& b : encoder_) add_block(b);
  for (auto& b : head_) add_block(b);
  for (auto& p : classifier_->params("head.out.")) out.push_back(p);
  return out;
}

std::vector<BufferRef> Model::buffers() {
  std::vector<BufferRef> out;
  for (auto* group : {&embed_, &encoder_, &head_}) {
    for (auto& b : *group) {
      for (auto& buf : b.norm->buffers(b.name + ".bn.")) out.push_back(buf);
    }
  }
  return out;
}

std::vector<std::pair<std::string, LinearLayer*>> Model::backbone() {
  std::vector<std::pair<std::string, LinearLayer*>> out;
  for (auto& b : embed_) out.emplace_back(b.name, b.linear.get());
  for (auto& b : encoder_) out.emplace_back(b.name, b.linear.get());
  return out;
}

std::vector<std::pair<std::string, ShiftLinear*>> Model::shift_layers() {
  std::vector<std::pair<std::string, ShiftLinear*>> out;
  for (auto* group : {&embed_, &encoder_, &head_}) {
    for (auto& b : *group) {
      if (auto* s = dynamic_cast<ShiftLinear*>(b.linear.get())) out.emplace_back(b.name, s);
    }
  }
  return out;
}

std::size_t Model::linear_layer_count() const { return embed_.size() + encoder_.size() + head_.size() + 1; }

std::size_t Model::parameter_count(bool include_bias) {
  std::size_t total = 0;
  for (const auto& p : params()) {
    if (include_bias || !p.is_bias) total += p.value->size();
  }
  return total;
}

}  // namespace samlp
