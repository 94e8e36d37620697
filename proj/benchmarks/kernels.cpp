#include <benchmark/benchmark.h>

#include "samlp/layers.hpp"
#include "samlp/models.hpp"
#include "samlp/shiftquant.hpp"
#include "samlp/tensor.hpp"

using namespace samlp;

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// rows x c_in -> c_out, shaped like a point-wise layer over a batch of clouds
void set_args(benchmark::internal::Benchmark* b) {
  b->Args({4096, 64, 64})->Args({4096, 128, 256})->Args({1024, 259, 512});
}

void set_counters(benchmark::State& state) {
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(state.iterations()) * state.range(0) * state.range(1) * state.range(2),
      benchmark::Counter::kIsRate);
}

void BM_AffineMap(benchmark::State& state) {
  Rng rng(1);
  const auto rows = static_cast<std::size_t>(state.range(0)), c_in = static_cast<std::size_t>(state.range(1)),
             c_out = static_cast<std::size_t>(state.range(2));
  const Tensor x = uniform({rows, c_in}, rng), w = uniform({c_out, c_in}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(affine_map(x, w));
  set_counters(state);
}
BENCHMARK(BM_AffineMap)->Apply(set_args);

void BM_PairwiseL1(benchmark::State& state) {
  Rng rng(2);
  const auto rows = static_cast<std::size_t>(state.range(0)), c_in = static_cast<std::size_t>(state.range(1)),
             c_out = static_cast<std::size_t>(state.range(2));
  const Tensor x = uniform({rows, c_in}, rng), w = uniform({c_out, c_in}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_l1_neg(x, w));
  set_counters(state);
}
BENCHMARK(BM_PairwiseL1)->Apply(set_args);

void BM_AdderBackward(benchmark::State& state) {
  Rng rng(3);
  const auto rows = static_cast<std::size_t>(state.range(0)), c_in = static_cast<std::size_t>(state.range(1)),
             c_out = static_cast<std::size_t>(state.range(2));
  const Tensor x = uniform({rows, c_in}, rng), w = uniform({c_out, c_in}, rng), dy = uniform({rows, c_out}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(adder_backward(dy, x, w));
  set_counters(state);
}
BENCHMARK(BM_AdderBackward)->Apply(set_args);

void BM_FixedShiftAffine(benchmark::State& state) {
  Rng rng(4);
  const auto rows = static_cast<std::size_t>(state.range(0)), c_in = static_cast<std::size_t>(state.range(1)),
             c_out = static_cast<std::size_t>(state.range(2));
  const Tensor x = uniform({rows, c_in}, rng, -8.0, 8.0);
  std::vector<std::int32_t> xq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xq[i] = to_fixed(x[i]);
  const auto codes = unpack_codes(pack_weights(quantize_shift(uniform({c_out, c_in}, rng))));
  for (auto _ : state) benchmark::DoNotOptimize(fixed_shift_affine(xq, rows, c_in, codes, c_out));
  set_counters(state);
}
BENCHMARK(BM_FixedShiftAffine)->Apply(set_args);

void BM_QuantizeShift(benchmark::State& state) {
  Rng rng(5);
  const Tensor w = uniform({static_cast<std::size_t>(state.range(0))}, rng, -2.0, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_shift(w));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_QuantizeShift)->Arg(1 << 12)->Arg(1 << 18);

void BM_KnnGroup(benchmark::State& state) {
  Rng rng(6);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor pts = uniform({8, n, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(knn_group(pts, 8));
}
BENCHMARK(BM_KnnGroup)->Arg(256)->Arg(1024);

void BM_ModelTrainStep(benchmark::State& state) {
  Rng rng(7);
  Model model(ModelConfig::desk(static_cast<Variant>(state.range(0))), rng);
  const Tensor x = uniform({32, 256, 3}, rng);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < 32; ++i) labels[i] = static_cast<int>(i % 4);
  for (auto _ : state) {
    const auto out = model.forward(x, Mode::train);
    model.backward(softmax_cross_entropy(out.logits, labels).dlogits);
  }
  state.SetLabel(std::string(to_string(static_cast<Variant>(state.range(0)))));
}
BENCHMARK(BM_ModelTrainStep)
    ->Arg(static_cast<int>(Variant::mul))
    ->Arg(static_cast<int>(Variant::shift))
    ->Arg(static_cast<int>(Variant::add))
    ->Arg(static_cast<int>(Variant::sa))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
