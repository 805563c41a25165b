#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "attnverify/model.hpp"
#include "attnverify/sites.hpp"
#include "attnverify/strategies.hpp"
#include "attnverify/verifier.hpp"

namespace av = attnverify;

namespace {

struct Fixture {
  av::Model model;
  av::Matrix X;
  av::VerificationTask task;
};

// One deterministic task per layer count. All rows perturbed so every
// relaxation site is live.
Fixture make_fixture(int layers) {
  av::ModelConfig cfg;
  cfg.num_layers = layers;
  cfg.seq_len = 4;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.head_dim = 4;
  cfg.ffn_hidden = 16;
  cfg.num_classes = 3;
  cfg.pooling = av::Pooling::Mean;

  Fixture f;
  f.model = av::generate_random_model(cfg, 7);
  f.X = av::generate_random_input(cfg, 1007);
  f.task = av::make_task(f.model, f.X, {0, 1, 2, 3}, 0.01, av::PNorm::Linf);
  return f;
}

void BM_Forward(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(av::forward(f.model, f.X));
  }
}

// One full bound propagation at a fixed alpha, the unit of work every
// strategy and every optimizer step pays.
void BM_BoundsFixedAlpha(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  const av::SiteIndexer layout(f.model.config);
  const std::vector<double> alpha(layout.size(), 0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(av::bounds_with_alpha(f.model, f.task, alpha));
  }
}

// Same propagation on the tape, returning the margin gradient as well.
// The ratio to BM_BoundsFixedAlpha is the cost of differentiation.
void BM_MarginGradient(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  const av::SiteIndexer layout(f.model.config);
  const std::vector<double> alpha(layout.size(), 0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(av::margin_gradient(f.model, f.task, alpha));
  }
}

void verify_with(benchmark::State& state, av::Strategy strategy, int max_steps) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  av::OptimizerConfig oc;
  oc.max_steps = max_steps;
  oc.early_stop = false;
  for (auto _ : state) {
    benchmark::DoNotOptimize(av::verify(f.model, f.task, strategy, oc));
  }
}

void BM_VerifyBaseline(benchmark::State& state) {
  verify_with(state, av::Strategy::Baseline, 0);
}

void BM_VerifyDual(benchmark::State& state) {
  verify_with(state, av::Strategy::Dual, 0);
}

void BM_VerifyRule(benchmark::State& state) {
  verify_with(state, av::Strategy::Rule, 0);
}

void BM_VerifyOptimized20(benchmark::State& state) {
  verify_with(state, av::Strategy::Optimized, 20);
}

}  // namespace

BENCHMARK(BM_Forward)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_BoundsFixedAlpha)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_MarginGradient)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_VerifyBaseline)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_VerifyDual)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_VerifyRule)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_VerifyOptimized20)->Arg(1)->Arg(2)->Arg(4);

BENCHMARK_MAIN();
