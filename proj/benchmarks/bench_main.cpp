#include <benchmark/benchmark.h>

#include <limits>

#include "defrec/chamfer.hpp"
#include "defrec/deformations.hpp"
#include "defrec/network.hpp"
#include "defrec/neighbor_index.hpp"
#include "defrec/pcm.hpp"
#include "defrec/rng.hpp"

using namespace defrec;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  PointMatrix m(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) - 0.5;
  return PointCloud(std::move(m));
}

void BM_NearestKdTree(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud a = random_cloud(n, 1);
  const PointCloud q = random_cloud(n, 2);
  for (auto _ : state) {
    const NeighborIndex index(a);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += index.nearest(q.point(i)).dist2;
    benchmark::DoNotOptimize(sum);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_NearestKdTree)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_NearestBruteForce(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud a = random_cloud(n, 1);
  const PointCloud q = random_cloud(n, 2);
  for (auto _ : state) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) best = std::min(best, squared_distance(q.points().row(i).data(), a.points().row(j).data()));
      sum += best;
    }
    benchmark::DoNotOptimize(sum);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_NearestBruteForce)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_ChamferDistance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud a = random_cloud(n, 3);
  const PointCloud b = random_cloud(n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_distance(a.points(), b.points()));
}
BENCHMARK(BM_ChamferDistance)->RangeMultiplier(4)->Range(256, 4096);

void BM_ChamferRegionGradient(benchmark::State& state) {
  const PointCloud a = random_cloud(1024, 5);
  const PointCloud b = random_cloud(1024, 6);
  std::vector<std::size_t> region;
  for (std::size_t i = 0; i < 1024; i += 4) region.push_back(i);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_loss_region(a.points(), b.points(), region).value);
}
BENCHMARK(BM_ChamferRegionGradient);

void BM_Deform(benchmark::State& state) {
  const PointCloud c = random_cloud(1024, 7);
  DeformSpec spec;
  spec.kind = static_cast<DeformKind>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(deform(c, spec, ++seed).region.size());
  state.SetLabel(to_string(spec.kind));
}
BENCHMARK(BM_Deform)->DenseRange(static_cast<int>(DeformKind::Voxel), static_cast<int>(DeformKind::Voxel) + 1)
    ->DenseRange(static_cast<int>(DeformKind::SampleSplit), static_cast<int>(DeformKind::SampleLambertian));

void BM_PcmClassify(benchmark::State& state) {
  const LabeledCloud a{random_cloud(1024, 8), 0};
  const LabeledCloud b{random_cloud(1024, 9), 1};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(pcm_classify(a, b, 10, kPcmAlpha, kPcmBeta, ++seed).from_first);
}
BENCHMARK(BM_PcmClassify);

void BM_EncoderForward(benchmark::State& state) {
  NetworkShape shape;
  shape.num_classes = 10;
  Model<float> model(shape);
  model.init_glorot(1);
  std::vector<PointCloud> batch;
  for (int i = 0; i < state.range(0); ++i) batch.push_back(random_cloud(256, 100 + static_cast<std::uint64_t>(i)));
  for (auto _ : state) {
    const EncoderTrace<float> enc = encode(model, batch);
    benchmark::DoNotOptimize(head_sup(model, enc, Mode::Eval).output.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  NetworkShape shape;
  shape.num_classes = 10;
  Model<float> model(shape);
  model.init_glorot(2);
  std::vector<PointCloud> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_cloud(256, 200 + static_cast<std::uint64_t>(i)));
  Gradients<float> grads(model.params().size());
  for (auto _ : state) {
    ForwardTrace<float> tr;
    tr.encoder = encode(model, batch);
    tr.ssl = head_ssl(model, tr.encoder);
    tr.param_count = model.params().size();
    const MatX<float> up = MatX<float>::Constant(tr.ssl->output.rows(), 3, 1e-3f);
    grads.zero();
    backward(model, tr, OutputGrads<float>{nullptr, &up, nullptr}, grads);
    benchmark::DoNotOptimize(grads.values.data());
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
