#include <benchmark/benchmark.h>

#include "side/config.hpp"
#include "side/model.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

using namespace side;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

static void BM_matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_softmax_rows(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor x = random_tensor({rows, 64}, rng);
  for (auto _ : state) {
    Tensor s = softmax_rows(x);
    benchmark::DoNotOptimize(s.data().data());
  }
}
BENCHMARK(BM_softmax_rows)->Arg(64)->Arg(512);

static void BM_bilinear_upsample(benchmark::State& state) {
  Rng rng(3);
  Tensor x = random_tensor({8, 16, 16}, rng);
  for (auto _ : state) {
    Tensor u = bilinear_upsample(x, 2);
    benchmark::DoNotOptimize(u.data().data());
  }
}
BENCHMARK(BM_bilinear_upsample);

static void BM_forward_backward_mlp(benchmark::State& state) {
  Rng rng(4);
  Tensor x = random_tensor({64, 32}, rng, true);
  Tensor w1 = random_tensor({32, 64}, rng, true);
  Tensor b1 = random_tensor({64}, rng, true);
  Tensor w2 = random_tensor({64, 32}, rng, true);
  Tensor b2 = random_tensor({32}, rng, true);
  for (auto _ : state) {
    Tensor h = gelu(linear(x, w1, b1));
    Tensor loss = sum(mul(linear(h, w2, b2), x));
    backward(loss);
    benchmark::DoNotOptimize(w1.grad().data());
    w1.zero_grad();
    w2.zero_grad();
    b1.zero_grad();
    b2.zero_grad();
    x.zero_grad();
  }
}
BENCHMARK(BM_forward_backward_mlp);

static void BM_model_forward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  RunConfig rc;
  rc.base_channels = c;
  rc.decoder_channels = c;
  ModelConfig mc;
  mc.encoder = rc.encoder_config();
  mc.decoder = rc.decoder_config();
  mc.image_h = 64;
  mc.image_w = 64;
  const Model model(mc, 7);
  Rng rng(5);
  Tensor image = random_tensor({3, 64, 64}, rng);
  for (auto _ : state) {
    MultiStagePrediction pred = model.forward(image);
    benchmark::DoNotOptimize(pred.final_depth().data().data());
  }
}
BENCHMARK(BM_model_forward)->Arg(4)->Arg(8);

BENCHMARK_MAIN();
