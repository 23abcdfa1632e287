#include <benchmark/benchmark.h>

#include "couplenet/eval.hpp"
#include "couplenet/heads.hpp"
#include "couplenet/nn.hpp"
#include "couplenet/proposals.hpp"
#include "couplenet/rng.hpp"
#include "couplenet/roi_layers.hpp"
#include "couplenet/synth.hpp"

using namespace couplenet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2d3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor(Shape{1, c, 24, 24}, 1);
  ConvParams p;
  p.weight = random_tensor(Shape{c, c, 3, 3}, 2);
  p.bias.assign(c, 0.0);
  p.stride = 1;
  p.padding = 1;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 24 * 24));
}
BENCHMARK(BM_Conv2d3x3)->Arg(16)->Arg(32);

void BM_RoIPoolMax(benchmark::State& state) {
  const Tensor f = random_tensor(Shape{1, 64, 24, 24}, 3);
  const RoI roi{0, 8, 12, 70, 80};
  for (auto _ : state) benchmark::DoNotOptimize(roi_pool_max(f, roi, 3, 3, 0.25));
}
BENCHMARK(BM_RoIPoolMax);

void BM_PSRoIPoolAvg(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Tensor maps = random_tensor(Shape{1, 5 * k * k, 24, 24}, 4);
  const RoI roi{0, 8, 12, 70, 80};
  for (auto _ : state) benchmark::DoNotOptimize(psroi_pool_avg(maps, roi, k, 5, 0.25));
}
BENCHMARK(BM_PSRoIPoolAvg)->Arg(3)->Arg(7);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.use_context = state.range(0) != 0;
  const ModelParams params = init_model_params(cfg, 5);
  const Scene scene = generate_scene(6, SceneConfig{});
  const Tensor image = rasterize(scene, 0.06);
  const auto rois = generate_test_proposals(scene, ProposalConfig{}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(params, cfg, image, rois));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rois.size()));
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Nms(benchmark::State& state) {
  Rng rng(8);
  std::vector<Detection> dets(static_cast<std::size_t>(state.range(0)));
  for (auto& d : dets) {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    d = {0, 1 + rng.below(4), rng.uniform(0, 1), {x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)}};
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.3));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
