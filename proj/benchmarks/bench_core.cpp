#include <benchmark/benchmark.h>

#include "cbodd/datagen.hpp"
#include "cbodd/metrics.hpp"
#include "cbodd/model.hpp"
#include "cbodd/optim.hpp"

namespace cbodd {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).value(0));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = random_tensor({8, 16, 16, 16}, rng);
  Tensor w = random_tensor({32, 16, 3, 3}, rng);
  Tensor b = random_tensor({32}, rng);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    sum(conv2d(x, w, b, 1, 1)).backward();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  CorpusConfig cc;
  cc.clips = 4;
  cc.frames = 8;
  cc.mix = DomainMix::A;
  const auto clips = generate_corpus(cc);
  std::vector<Frame> frames;
  std::vector<int> labels;
  std::vector<double> expression;
  for (const auto& c : clips)
    for (std::size_t t = 0; t < c.frames.size(); ++t) {
      frames.push_back(c.frames[t]);
      labels.push_back(c.label == Label::Fake ? 1 : 0);
      expression.push_back(c.expression[t]);
    }
  const Tensor batch = stack_frames(frames);
  const RunConfig config;
  CbodModel model(config);
  Adam opt(tensors_of(model.parameters()), config.optim);
  for (auto _ : state) {
    const auto fwd = model.forward(batch);
    const auto obj = model.objective(fwd, labels, expression);
    opt.zero_grad();
    obj.objective.backward();
    opt.step();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(frames.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(s, y));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

}  // namespace
}  // namespace cbodd

BENCHMARK_MAIN();
