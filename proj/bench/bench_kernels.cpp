// OpenMP kernels against their serial references on one simulated scene.
// The OpenMP variants take the thread count as the benchmark argument.

#include <benchmark/benchmark.h>

#include "psplat/reference.hpp"
#include "psplat/scene_sim.hpp"
#include "psplat/supersegment.hpp"

using namespace psplat;

namespace {

const Scene& scene() {
  static const Scene s = [] {
    SimConfig cfg;
    cfg.seed = 3;
    cfg.width = 160;
    cfg.height = 120;
    cfg.camera_count = 8;
    cfg.points_per_object = 400;
    cfg.stuff_density = 40.0;
    return generate(cfg);
  }();
  return s;
}

const LanguageField& field() {
  static const LanguageField f = [] {
    FieldConfig cfg;
    cfg.resolutions = {16, 32, 64};
    cfg.channels = 4;
    cfg.hidden = 64;
    return LanguageField::create(cfg, Aabb::around(scene().cloud.positions, 0.05), 16, 1);
  }();
  return f;
}

const FeatureMatrix& random_features() {
  static const FeatureMatrix f = [] {
    FeatureMatrix m(scene().cloud.size(), 16);
    Rng rng(9);
    for (std::size_t i = 0; i < m.rows; ++i) {
      double n = 0.0;
      auto row = m.row(i);
      for (auto& x : row) {
        x = static_cast<float>(rng.normal());
        n += double(x) * x;
      }
      for (auto& x : row) x = static_cast<float>(x / std::sqrt(n));
    }
    return m;
  }();
  return f;
}

struct AffinityCase {
  SuperPrimitivePartition part;
  std::vector<std::vector<std::uint32_t>> labels;
  std::vector<std::vector<std::uint32_t>> clusters;
  std::vector<VertexPair> pairs;
};

// One super-primitive per block of 40 primitives; all pairs among them.
const AffinityCase& affinity_case() {
  static const AffinityCase c = [] {
    AffinityCase a;
    const auto& s = scene();
    const std::uint32_t n = static_cast<std::uint32_t>(s.cloud.size());
    const std::uint32_t segments = (n + 39) / 40;
    for (std::uint32_t i = 0; i < n; ++i) a.part.segment_of.push_back(i / 40);
    a.part.segments.resize(segments);
    for (const auto& v : s.views) a.labels.push_back(primitive_mask_labels(s.cloud, v.camera, v.mask, 0.05));
    for (std::uint32_t k = 0; k < segments; ++k) a.clusters.push_back({k});
    for (std::uint32_t x = 0; x < segments; ++x)
      for (std::uint32_t y = x + 1; y < segments && y < x + 24; ++y) a.pairs.emplace_back(x, y);
    return a;
  }();
  return c;
}

void threads(benchmark::State& state) { set_thread_count(static_cast<int>(state.range(0))); }

void BM_knn_reference(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(reference::knn_lists(scene().cloud.positions, 16));
}
void BM_knn(benchmark::State& state) {
  threads(state);
  for (auto _ : state) benchmark::DoNotOptimize(knn_lists(scene().cloud.positions, 16));
}

void BM_visibility_reference(benchmark::State& state) {
  const auto& v = scene().views[0];
  for (auto _ : state) benchmark::DoNotOptimize(reference::visibility(scene().cloud, v.camera, 0.05));
}
void BM_visibility(benchmark::State& state) {
  threads(state);
  const auto& v = scene().views[0];
  for (auto _ : state) benchmark::DoNotOptimize(visibility(scene().cloud, v.camera, 0.05));
}

void BM_fuse_reference(benchmark::State& state) {
  const auto cams = scene().cameras();
  const auto maps = scene().feature_maps();
  for (auto _ : state) benchmark::DoNotOptimize(reference::fuse(scene().cloud, cams, maps, FusionConfig{}));
}
void BM_fuse(benchmark::State& state) {
  threads(state);
  const auto cams = scene().cameras();
  const auto maps = scene().feature_maps();
  for (auto _ : state) benchmark::DoNotOptimize(fuse(scene().cloud, cams, maps, FusionConfig{}));
}

void BM_field_features_reference(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(reference::field_features(field(), scene().cloud));
}
void BM_field_features(benchmark::State& state) {
  threads(state);
  for (auto _ : state) benchmark::DoNotOptimize(field_features(field(), scene().cloud));
}

void BM_classify_reference(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(reference::classify(random_features(), scene().queries));
}
void BM_classify(benchmark::State& state) {
  threads(state);
  for (auto _ : state) benchmark::DoNotOptimize(classify(random_features(), scene().queries));
}

void BM_affinities_reference(benchmark::State& state) {
  const auto& c = affinity_case();
  const MaskAffinity source(c.part, c.labels);
  for (auto _ : state) benchmark::DoNotOptimize(reference::evaluate_affinities(c.pairs, c.clusters, source));
}
void BM_affinities(benchmark::State& state) {
  threads(state);
  const auto& c = affinity_case();
  const MaskAffinity source(c.part, c.labels);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_affinities(c.pairs, c.clusters, source));
}

}  // namespace

BENCHMARK(BM_knn_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_knn)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_visibility_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_visibility)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_fuse_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_fuse)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_field_features_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_field_features)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_classify_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_classify)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_affinities_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_affinities)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
