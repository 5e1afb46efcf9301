#include <benchmark/benchmark.h>

#include <random>

#include "mapr/attacks.hpp"
#include "mapr/classifier.hpp"
#include "mapr/intrinsic.hpp"
#include "mapr/knn.hpp"
#include "mapr/losses.hpp"
#include "mapr/model.hpp"

namespace {

mapr::PointCloud cloud(std::size_t n, std::uint64_t seed) {
  mapr::Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> xyz(3 * n);
  for (double& v : xyz) v = g(rng);
  return mapr::normalize_unit_sphere(mapr::PointCloud(std::move(xyz)));
}

void BM_KnnSearch(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(mapr::knn_search(c, 20));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KnnSearch)->RangeMultiplier(2)->Range(256, 4096)->Complexity();

void BM_IntrinsicMap(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(mapr::intrinsic_map(c, 20));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_IntrinsicMap)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

mapr::ModelConfig desk_model() {
  mapr::ModelConfig m;
  m.point_widths = {32, 64, 128};
  m.head_widths = {64};
  return m;
}

void BM_ForwardBackward(benchmark::State& state) {
  const std::size_t batch = 12, n = static_cast<std::size_t>(state.range(0));
  mapr::PointNetLite model(desk_model(), 3);
  std::vector<mapr::PointCloud> clouds;
  std::vector<mapr::IntrinsicFeatures> phi;
  std::vector<int> labels;
  for (std::size_t b = 0; b < batch; ++b) {
    clouds.push_back(cloud(n, 10 + b));
    phi.push_back(mapr::intrinsic_map(clouds.back(), 20));
    labels.push_back(static_cast<int>(b % 8));
  }
  const mapr::Tensor x = mapr::encode_augmented(clouds, phi);
  for (auto _ : state) {
    model.zero_grad();
    mapr::Tape tape;
    mapr::Tensor loss;
    {
      mapr::Tape::Scope scope(tape);
      loss = mapr::cross_entropy(model.forward(x), labels);
    }
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_AttackStep(benchmark::State& state) {
  // One gradient step of PGD-linf on an augmented model, feature path included.
  mapr::PointNetLite model(desk_model(), 4);
  const mapr::Classifier clf(model, 20);
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 5);
  mapr::Rng rng(6);
  for (auto _ : state)
    benchmark::DoNotOptimize(mapr::pgd(clf, c, 0, mapr::Norm::kLinf, 0.05, 1, 0.01, false, rng));
}
BENCHMARK(BM_AttackStep)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
