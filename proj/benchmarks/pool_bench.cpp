#include <benchmark/benchmark.h>

#include "unipool/ops.hpp"
#include "unipool/pooling.hpp"
#include "unipool/rng.hpp"
#include "unipool/tape.hpp"

using namespace unipool;

namespace {

Tensor<float> random_map(std::int64_t n, std::int64_t c, std::int64_t h,
                         std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, c, h, w});
  for (auto& v : t.mut()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  auto x = random_map(8, c, 16, 16, 1);
  Rng rng(2);
  Tensor<float> w({c, c, 3, 3});
  for (auto& v : w.mut()) v = static_cast<float>(rng.normal(0.0, 0.05));
  for (auto _ : state) {
    auto y = conv2d<float>(x, w, std::nullopt, 1, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  auto x = random_map(8, c, 16, 16, 1);
  x.set_requires_grad(true);
  Rng rng(2);
  Tensor<float> w({c, c, 3, 3});
  for (auto& v : w.mut()) v = static_cast<float>(rng.normal(0.0, 0.05));
  w.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto loss = sum(conv2d<float>(x, w, std::nullopt, 1, 1));
    tape.backward(loss);
    benchmark::DoNotOptimize(x.grad().data());
    x.zero_grad();
    w.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(3);
  Tensor<float> a({n, n}), b({n, n});
  for (auto& v : a.mut()) v = static_cast<float>(rng.normal());
  for (auto& v : b.mut()) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    auto y = matmul(a, b);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_BaselinePool(benchmark::State& state) {
  auto x = random_map(8, 64, 16, 16, 4);
  const int which = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Tensor<float> y;
    switch (which) {
      case 0: y = max_pool(x, 2); break;
      case 1: y = avg_pool(x, 2); break;
      default: y = stride_pool(x, 2); break;
    }
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_BaselinePool)->Arg(0)->Arg(1)->Arg(2);

void BM_BlockSoftmax(benchmark::State& state) {
  auto x = random_map(8, 64, 16, 16, 5);
  for (auto _ : state) {
    auto y = block_softmax(x, 2);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_BlockSoftmax);

void BM_UniversalForward(benchmark::State& state) {
  const B1Kind kind = static_cast<B1Kind>(state.range(0));
  auto x = random_map(8, 64, 16, 16, 6);
  Rng rng(7);
  auto st = make_universal<float>(kind, 64, 2, false, rng);
  for (auto& [name, t] : st.named_params("p"))
    for (auto& v : t->mut()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  for (auto _ : state) {
    auto out = universal_pool(x, st, false);
    benchmark::DoNotOptimize(out.o.data().data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_UniversalForward)
    ->Arg(static_cast<int>(B1Kind::kFc1))
    ->Arg(static_cast<int>(B1Kind::kFc2))
    ->Arg(static_cast<int>(B1Kind::kConv));

void BM_UniversalBackward(benchmark::State& state) {
  const B1Kind kind = static_cast<B1Kind>(state.range(0));
  auto x = random_map(8, 64, 16, 16, 6);
  x.set_requires_grad(true);
  Rng rng(7);
  auto st = make_universal<float>(kind, 64, 2, false, rng);
  for (auto& [name, t] : st.named_params("p")) {
    for (auto& v : t->mut()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
    t->set_requires_grad(true);
  }
  for (auto _ : state) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto loss = sum(universal_pool(x, st, false).o);
    tape.backward(loss);
    benchmark::DoNotOptimize(x.grad().data());
    x.zero_grad();
    for (auto& [name, t] : st.named_params("p")) t->zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_UniversalBackward)
    ->Arg(static_cast<int>(B1Kind::kFc1))
    ->Arg(static_cast<int>(B1Kind::kFc2))
    ->Arg(static_cast<int>(B1Kind::kConv));

}  // namespace

BENCHMARK_MAIN();
