#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "samlp/layers.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

/// Cosine annealing from lr_start to lr_end. `cycles` > 1 restarts the cosine
/// that many times over the run; the final epoch always lands on lr_end.
struct Schedule {
  int total_epochs = 1;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  int cycles = 1;
};

/// Raises RangeError for epoch outside [0, total_epochs].
double lr_at(const Schedule& schedule, double epoch);

/// Rescales g so its RMS equals eta: g * eta * sqrt(n) / ||g||_2.
/// An all-zero gradient yields zeros.
Tensor modulate_gradient(const Tensor& g, double eta);

/// w <- w - lr * modulate_gradient(g, eta). Returns false when g was all zero
/// and no update was made.
bool modulated_sgd_step(Tensor& w, const Tensor& g, double lr, double eta);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct MomentState {
  std::vector<double> first;
  std::vector<double> second;
  std::int64_t steps = 0;
};

/// Bias-corrected adaptive moment update. State is lazily sized to w.
void adaptive_moment_step(Tensor& w, const Tensor& g, MomentState& state, double lr, const AdamConfig& cfg = {});

enum class OptimizerKind { adaptive_moment, modulated_sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimRoute {
  ParamKind layer_kind = ParamKind::mul;
  OptimizerKind optimizer = OptimizerKind::adaptive_moment;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  double eta = 0.2;  // only used by modulated_sgd
  int cycles = 1;
};

using RoutingTable = std::map<ParamKind, OptimRoute>;

/// Adam with 1e-3 -> 1e-6 for mul, shift and norm parameters; modulated SGD
/// with 2e-2 -> 2e-3 and eta = 0.2 for adder weights.
RoutingTable default_routing();

/// Raises ConfigError for a modulated route with eta <= 0 or nonpositive rates.
void validate_route(const OptimRoute& route);

struct ParamGroup {
  OptimRoute route;
  std::vector<ParamRef> params;
};

/// Partitions params by their kind's route. Params whose routes are
/// identical share a group. Raises ConfigError for an unrouted kind.
std::vector<ParamGroup> route_parameters(std::span<const ParamRef> params, const RoutingTable& table);

/// Applies each group's update rule with its scheduled learning rate.
class Optimizer {
 public:
  Optimizer(std::vector<ParamGroup> groups, int total_epochs, AdamConfig adam = {});

  void step(int epoch);

  const std::vector<ParamGroup>& groups() const noexcept { return groups_; }
  /// Learning rate each group uses at `epoch`.
  std::vector<double> learning_rates(int epoch) const;
  /// Count of modulated updates skipped because the gradient was all zero.
  std::uint64_t zero_gradient_events() const noexcept { return zero_events_; }

 private:
  Schedule schedule_for(const OptimRoute& route) const;

  std::vector<ParamGroup> groups_;
  std::map<std::string, MomentState> moments_;
  int total_epochs_;
  AdamConfig adam_;
  std::uint64_t zero_events_ = 0;
};

}  // namespace samlp
