// Microbenchmarks for the hot autodiff paths: convolution, the full model
// forward/backward, and one FGSM attack batch.

#include <benchmark/benchmark.h>

#include "atlab/attacks.hpp"
#include "atlab/nn.hpp"

namespace {

using atlab::Tensor;

Tensor<float> random_batch(atlab::Shape shape, uint64_t seed) {
  atlab::Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(atlab::numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>(shape, std::move(v));
}

std::vector<int> random_labels(int64_t n, int64_t classes, uint64_t seed) {
  atlab::Rng rng(seed);
  std::vector<int> y(static_cast<size_t>(n));
  for (auto& c : y) c = static_cast<int>(rng.range(classes));
  return y;
}

atlab::ModelConfig bench_model(int64_t side) {
  atlab::ModelConfig cfg;
  cfg.in_h = side;
  cfg.in_w = side;
  return cfg;
}

void BM_Conv2dForward(benchmark::State& state) {
  auto x = random_batch(atlab::Shape{32, 16, 16, 16}, 1);
  auto w = random_batch(atlab::Shape{32, 16, 3, 3}, 2);
  atlab::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(atlab::conv2d(x, w, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  auto x = random_batch(atlab::Shape{32, 16, 16, 16}, 1);
  auto w = random_batch(atlab::Shape{32, 16, 3, 3}, 2);
  x.set_requires_grad();
  w.set_requires_grad();
  for (auto _ : state) {
    auto out = atlab::sum(atlab::conv2d(x, w, 1, 1));
    benchmark::DoNotOptimize(atlab::grad(out, {x, w}));
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  auto model = atlab::Model<float>::build(bench_model(16), 3);
  auto x = random_batch(atlab::Shape{32, 3, 16, 16}, 4);
  atlab::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, false, false));
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_ModelBackward(benchmark::State& state) {
  auto model = atlab::Model<float>::build(bench_model(16), 3);
  auto x = random_batch(atlab::Shape{32, 3, 16, 16}, 4);
  auto y = random_labels(32, 10, 5);
  std::vector<Tensor<float>> params;
  for (auto& p : model.params())
    if (p.trainable) params.push_back(p.value);
  for (auto _ : state) {
    auto loss = atlab::cross_entropy(model.forward(x, true, false), y);
    benchmark::DoNotOptimize(atlab::grad(loss, params));
  }
}
BENCHMARK(BM_ModelBackward)->Unit(benchmark::kMillisecond);

void BM_FgsmBatch(benchmark::State& state) {
  auto model = atlab::Model<float>::build(bench_model(16), 3);
  auto x = random_batch(atlab::Shape{32, 3, 16, 16}, 4);
  auto y = random_labels(32, 10, 5);
  atlab::AttackConfig cfg;
  for (auto _ : state)
    benchmark::DoNotOptimize(atlab::run_attack(model, x, y, cfg, state.iterations()));
}
BENCHMARK(BM_FgsmBatch)->Unit(benchmark::kMillisecond);

void BM_Pgd10Batch(benchmark::State& state) {
  auto model = atlab::Model<float>::build(bench_model(16), 3);
  auto x = random_batch(atlab::Shape{32, 3, 16, 16}, 4);
  auto y = random_labels(32, 10, 5);
  atlab::AttackConfig cfg;
  cfg.family = atlab::AttackFamily::pgd;
  cfg.steps = 10;
  cfg.init = atlab::AttackInit::uniform_random;
  for (auto _ : state)
    benchmark::DoNotOptimize(atlab::run_attack(model, x, y, cfg, state.iterations()));
}
BENCHMARK(BM_Pgd10Batch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
