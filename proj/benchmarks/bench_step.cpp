// One full adversarial-training step under each regularizer, on an identical
// batch.  The relative timings show the cost ladder: the first-layer weight
// term is nearly free, the alignment term adds one double-backprop pass over
// two gradient fields, and the input-norm penalty is the most expensive.

#include <benchmark/benchmark.h>

#include "atlab/training.hpp"
#include "atlab/tricks.hpp"

namespace {

using atlab::Tensor;

struct StepFixture {
  atlab::Model<float> model;
  Tensor<float> x;
  std::vector<int> y;
  std::vector<Tensor<float>> params;
  std::vector<Tensor<float>> velocity;

  explicit StepFixture(uint64_t seed) : model(atlab::Model<float>::build(config(), seed)) {
    atlab::Rng rng(seed + 1);
    std::vector<float> v(32 * 3 * 16 * 16);
    for (auto& e : v) e = static_cast<float>(rng.uniform());
    x = Tensor<float>(atlab::Shape{32, 3, 16, 16}, std::move(v));
    y.resize(32);
    for (auto& c : y) c = static_cast<int>(rng.range(10));
    for (auto& p : model.params())
      if (p.trainable) params.push_back(p.value);
  }

  static atlab::ModelConfig config() {
    atlab::ModelConfig cfg;
    cfg.in_h = 16;
    cfg.in_w = 16;
    return cfg;
  }

  void step(const atlab::RegularizerConfig& reg, uint64_t seed) {
    atlab::AttackConfig atk;
    auto delta = atlab::run_attack(model, x, y, atk, seed);
    auto adv = atlab::perturbed(x, delta, true);
    auto loss = atlab::cross_entropy(model.forward(adv, true, true), y);
    if (reg.gradnorm_beta > 0) {
      auto penalty = atlab::add(atlab::gradnorm_term(model, x, y, reg.gradnorm_beta),
                                atlab::gradnorm_term(model, adv, y, reg.gradnorm_beta));
      loss = atlab::add(loss, atlab::mul_scalar(penalty, 0.5f));
    }
    if (reg.weightnorm_lambda > 0)
      loss = atlab::add(loss, atlab::weightnorm_term(model, delta, reg.weightnorm_lambda));
    if (reg.gradalign_lambda > 0) {
      atlab::Rng rng(seed + 17);
      loss = atlab::add(
          loss, atlab::gradalign_term(model, x, y, atk.epsilon, reg.gradalign_lambda, rng));
    }
    auto grads = atlab::grad(loss, params);
    atlab::sgd_step(params, grads, velocity, 0.01, 0.9, 5e-4);
  }
};

void run_step_bench(benchmark::State& state, const atlab::RegularizerConfig& reg) {
  StepFixture fx(7);
  uint64_t seed = 0;
  for (auto _ : state) fx.step(reg, seed++);
}

void BM_StepVanilla(benchmark::State& state) {
  run_step_bench(state, atlab::RegularizerConfig{});
}
BENCHMARK(BM_StepVanilla)->Unit(benchmark::kMillisecond);

void BM_StepWeightNorm(benchmark::State& state) {
  atlab::RegularizerConfig reg;
  reg.weightnorm_lambda = atlab::kWeightNormLambdaDefault;
  run_step_bench(state, reg);
}
BENCHMARK(BM_StepWeightNorm)->Unit(benchmark::kMillisecond);

void BM_StepGradAlign(benchmark::State& state) {
  atlab::RegularizerConfig reg;
  reg.gradalign_lambda = atlab::kGradAlignLambdaDefault;
  run_step_bench(state, reg);
}
BENCHMARK(BM_StepGradAlign)->Unit(benchmark::kMillisecond);

void BM_StepGradNorm(benchmark::State& state) {
  atlab::RegularizerConfig reg;
  reg.gradnorm_beta = atlab::kGradNormBetaDefault;
  run_step_bench(state, reg);
}
BENCHMARK(BM_StepGradNorm)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
