#include "samlp/optim.hpp"

#include <cmath>
#include <numbers>

#include "samlp/error.hpp"

namespace samlp {

double lr_at(const Schedule& s, double epoch) {
  if (epoch < 0.0 || epoch > s.total_epochs) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + "]");
  }
  if (s.total_epochs <= 0) return s.lr_start;
  if (epoch >= s.total_epochs) return s.lr_end;
  const int cycles = std::max(1, s.cycles);
  const double period = static_cast<double>(s.total_epochs) / cycles;
  const double phase = std::fmod(epoch, period) / period;
  return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(std::numbers::pi * phase));
}

Tensor modulate_gradient(const Tensor& g, double eta) {
  double sq = 0.0;
  for (float v : g.data()) sq += static_cast<double>(v) * v;
  Tensor out(g.shape());
  if (sq == 0.0) return out;
  const double scale = eta * std::sqrt(static_cast<double>(g.size())) / std::sqrt(sq);
  for (std::size_t k = 0; k < g.size(); ++k) out[k] = static_cast<float>(g[k] * scale);
  return out;
}

bool modulated_sgd_step(Tensor& w, const Tensor& g, double lr, double eta) {
  if (w.shape() != g.shape()) {
    throw DimensionError("modulated_sgd_step: weight " + shape_to_string(w.shape()) + " vs gradient " +
                         shape_to_string(g.shape()));
  }
  const Tensor step = modulate_gradient(g, eta);
  bool any = false;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (step[k] != 0.0f) any = true;
    w[k] = static_cast<float>(w[k] - lr * step[k]);
  }
  return any;
}

void adaptive_moment_step(Tensor& w, const Tensor& g, MomentState& state, double lr, const AdamConfig& cfg) {
  if (w.shape() != g.shape()) {
    throw DimensionError("adaptive_moment_step: weight " + shape_to_string(w.shape()) + " vs gradient " +
                         shape_to_string(g.shape()));
  }
  if (state.first.empty()) {
    state.first.assign(w.size(), 0.0);
    state.second.assign(w.size(), 0.0);
  }
  if (state.first.size() != w.size()) throw DimensionError("adaptive_moment_step: state size mismatch");
  ++state.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double gk = g[k];
    state.first[k] = cfg.beta1 * state.first[k] + (1.0 - cfg.beta1) * gk;
    state.second[k] = cfg.beta2 * state.second[k] + (1.0 - cfg.beta2) * gk * gk;
    const double m_hat = state.first[k] / c1;
    const double v_hat = state.second[k] / c2;
    w[k] = static_cast<float>(w[k] - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adaptive_moment ? "adaptive_moment" : "modulated_sgd";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adaptive_moment" || name == "adam") return OptimizerKind::adaptive_moment;
  if (name == "modulated_sgd" || name == "sgd") return OptimizerKind::modulated_sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

RoutingTable default_routing() {
  RoutingTable t;
  for (ParamKind k : {ParamKind::mul, ParamKind::shift, ParamKind::norm}) {
    t[k] = OptimRoute{k, OptimizerKind::adaptive_moment, 1e-3, 1e-6, 0.2, 1};
  }
  t[ParamKind::adder] = OptimRoute{ParamKind::adder, OptimizerKind::modulated_sgd, 2e-2, 2e-3, 0.2, 1};
  return t;
}

void validate_route(const OptimRoute& r) {
  if (!(r.lr_start > 0.0) || !(r.lr_end > 0.0)) {
    throw ConfigError("route for " + std::string(to_string(r.layer_kind)) + ": learning rates must be positive");
  }
  if (r.optimizer == OptimizerKind::modulated_sgd && !(r.eta > 0.0)) {
    throw ConfigError("route for " + std::string(to_string(r.layer_kind)) + ": eta must be positive");
  }
}

namespace {

bool same_rule(const OptimRoute& a, const OptimRoute& b) {
  return a.optimizer == b.optimizer && a.lr_start == b.lr_start && a.lr_end == b.lr_end && a.cycles == b.cycles &&
         (a.optimizer == OptimizerKind::adaptive_moment || a.eta == b.eta);
}

}  // namespace

std::vector<ParamGroup> route_parameters(std::span<const ParamRef> params, const RoutingTable& table) {
  std::vector<ParamGroup> groups;
  for (const ParamRef& p : params) {
    auto it = table.find(p.kind);
    if (it == table.end()) {
      throw ConfigError("parameter '" + p.name + "' of kind " + std::string(to_string(p.kind)) +
                        " has no optimizer route");
    }
    validate_route(it->second);
    auto g = std::find_if(groups.begin(), groups.end(),
                          [&](const ParamGroup& grp) { return same_rule(grp.route, it->second); });
    if (g == groups.end()) {
      groups.push_back({it->second, {}});
      g = std::prev(groups.end());
    }
    g->params.push_back(p);
  }
  return groups;
}

Optimizer::Optimizer(std::vector<ParamGroup> groups, int total_epochs, AdamConfig adam)
    : groups_(std::move(groups)), total_epochs_(total_epochs), adam_(adam) {}

Schedule Optimizer::schedule_for(const OptimRoute& route) const {
  return Schedule{total_epochs_, route.lr_start, route.lr_end, route.cycles};
}

std::vector<double> Optimizer::learning_rates(int epoch) const {
  std::vector<double> out;
  for (const auto& g : groups_) out.push_back(lr_at(schedule_for(g.route), epoch));
  return out;
}

void Optimizer::step(int epoch) {
  for (auto& group : groups_) {
    const double lr = lr_at(schedule_for(group.route), epoch);
    for (auto& p : group.params) {
      if (group.route.optimizer == OptimizerKind::modulated_sgd) {
        if (!modulated_sgd_step(*p.value, *p.grad, lr, group.route.eta)) ++zero_events_;
      } else {
        adaptive_moment_step(*p.value, *p.grad, moments_[p.name], lr, adam_);
      }
    }
  }
}

}  // namespace samlp
