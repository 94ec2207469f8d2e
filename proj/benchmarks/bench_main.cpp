#include <benchmark/benchmark.h>

#include "rest/loss.hpp"
#include "rest/perturb.hpp"
#include "rest/pipeline.hpp"
#include "rest/random.hpp"
#include "rest/tape.hpp"

using namespace rest;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> labels_for(std::size_t batch) {
  std::vector<int> y(batch);
  for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<int>(i % 5);
  return y;
}

}  // namespace

// args: batch, K_in, K_out, L, kernel
void BM_Conv1dForward(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0)), cin = static_cast<std::size_t>(state.range(1)),
             cout = static_cast<std::size_t>(state.range(2)), len = static_cast<std::size_t>(state.range(3)),
             k = static_cast<std::size_t>(state.range(4));
  const Tensor x = uniform({b, cin, len}, 1), w = uniform({cout, cin, k}, 2), bias = uniform({cout}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, w, bias, 1));
  const double flops = 2.0 * double(b * cout * cin * k * (len - k + 1));
  state.counters["FLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv1dForward)->Args({32, 1, 16, 256, 8})->Args({32, 16, 32, 30, 3})->Args({32, 32, 32, 14, 3});

void BM_Conv1dBackward(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0)), cin = static_cast<std::size_t>(state.range(1)),
             cout = static_cast<std::size_t>(state.range(2)), len = static_cast<std::size_t>(state.range(3)),
             k = static_cast<std::size_t>(state.range(4));
  Tensor x = uniform({b, cin, len}, 1), w = uniform({cout, cin, k}, 2), bias = uniform({cout}, 3);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  bias.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum(conv1d(x, w, bias, 1)));
  }
}
BENCHMARK(BM_Conv1dBackward)->Args({32, 1, 16, 256, 8})->Args({32, 16, 32, 30, 3});

void BM_TinyForward(benchmark::State& state) {
  Network net = Network::build(tiny_preset(256), 1);
  const auto b = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({b, 1, 256}, 4, 50.0);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, Mode::kEval));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * b));
}
BENCHMARK(BM_TinyForward)->Arg(1)->Arg(32)->Arg(128);

// One training step of the full objective: attack, forward, backward.
void BM_TinyRestLossStep(benchmark::State& state) {
  Network net = Network::build(tiny_preset(256), 1);
  const Tensor x = uniform({32, 1, 256}, 5, 50.0);
  const auto y = labels_for(32);
  TrainConfig cfg;
  cfg.n_iter = static_cast<int>(state.range(0));
  cfg.epsilon = cfg.n_iter ? 4.0 : 0.0;
  for (auto _ : state) {
    net.zero_grad();
    Tape tape;
    LossBreakdown l = rest_loss(net, x, y, cfg);
    tape.backward(l.total);
  }
}
BENCHMARK(BM_TinyRestLossStep)->Arg(0)->Arg(1)->Arg(5);

void BM_PgdAttack(benchmark::State& state) {
  Network net = Network::build(tiny_preset(256), 1);
  const Tensor x = uniform({32, 1, 256}, 6, 50.0);
  const auto y = labels_for(32);
  const PgdParams p{6.0, 6.0, static_cast<int>(state.range(0))};
  for (auto _ : state) benchmark::DoNotOptimize(pgd_attack(net, x, y, p, Mode::kEval));
}
BENCHMARK(BM_PgdAttack)->Arg(1)->Arg(10);

void BM_SpectralPenalty(benchmark::State& state) {
  Network net = Network::build(tiny_preset(256), 1);
  for (auto _ : state) {
    Tape tape;
    tape.backward(spectral_penalty(net));
    net.zero_grad();
  }
}
BENCHMARK(BM_SpectralPenalty);

void BM_RankAndCompact(benchmark::State& state) {
  const Network net = Network::build(sors_like_preset(256), 1);
  for (auto _ : state) benchmark::DoNotOptimize(compact(net, rank_and_mask(net, 0.8)));
}
BENCHMARK(BM_RankAndCompact);

void BM_GaussianCorrupt(benchmark::State& state) {
  const Tensor x = uniform({128, 1, 256}, 7, 50.0);
  const DataStats stats{30.0, -100.0, 100.0};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_corrupt(x, 0.2, stats, ++seed));
}
BENCHMARK(BM_GaussianCorrupt);

BENCHMARK_MAIN();
