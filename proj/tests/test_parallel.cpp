#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "psplat/reference.hpp"
#include "psplat/scene_sim.hpp"
#include "psplat/supersegment.hpp"
#include "support.hpp"

using namespace psplat;

// Kernels run with several thread counts (oversubscribed on small
// machines) and must match the serial references bit for bit.

namespace {

const Scene& scene() {
  static const Scene s = [] {
    SimConfig cfg;
    cfg.seed = 21;
    cfg.width = 96;
    cfg.height = 72;
    cfg.camera_count = 5;
    cfg.points_per_object = 250;
    cfg.stuff_density = 30.0;
    return generate(cfg);
  }();
  return s;
}

const std::vector<int> kThreads{1, 3, 4};

}  // namespace

TEST_CASE("knn lists") {
  const auto& pts = scene().cloud.positions;
  const auto want = reference::knn_lists(pts, 16);
  for (int t : kThreads) {
    set_thread_count(t);
    CHECK(knn_lists(pts, 16) == want);
  }
}

TEST_CASE("visibility") {
  for (const auto& view : scene().views) {
    const auto want = reference::visibility(scene().cloud, view.camera, 0.05);
    for (int t : kThreads) {
      set_thread_count(t);
      CHECK(visibility(scene().cloud, view.camera, 0.05) == want);
    }
  }
}

TEST_CASE("fusion") {
  const auto cams = scene().cameras();
  const auto maps = scene().feature_maps();
  const FusionConfig cfg;
  const auto want = reference::fuse(scene().cloud, cams, maps, cfg);
  for (int t : kThreads) {
    set_thread_count(t);
    const auto got = fuse(scene().cloud, cams, maps, cfg);
    CHECK(got.features.data == want.features.data);
    CHECK(got.confidence == want.confidence);
    CHECK(got.obs_count == want.obs_count);
  }
}

TEST_CASE("field features") {
  FieldConfig cfg;
  cfg.resolutions = {8, 16};
  cfg.channels = 4;
  cfg.hidden = 32;
  const auto field = LanguageField::create(cfg, Aabb::around(scene().cloud.positions, 0.05), 16, 5);
  const auto want = reference::field_features(field, scene().cloud);
  for (int t : kThreads) {
    set_thread_count(t);
    CHECK(field_features(field, scene().cloud).data == want.data);
  }
}

TEST_CASE("mask labels and classification") {
  const auto& view = scene().views[2];
  const auto want = reference::primitive_mask_labels(scene().cloud, view.camera, view.mask, 0.05);
  FeatureMatrix f(scene().cloud.size(), 16);
  Rng rng(4);
  for (std::size_t i = 0; i < f.rows; ++i) {
    const auto u = test::random_unit(rng, 16);
    std::copy(u.begin(), u.end(), f.row(i).begin());
  }
  const auto cwant = reference::classify(f, scene().queries);
  for (int t : kThreads) {
    set_thread_count(t);
    CHECK(primitive_mask_labels(scene().cloud, view.camera, view.mask, 0.05) == want);
    const auto c = classify(f, scene().queries);
    CHECK(c.class_of == cwant.class_of);
    CHECK(c.similarity == cwant.similarity);
  }
}

TEST_CASE("affinities") {
  const auto& s = scene();
  // Coarse super-primitives: one per GT instance.
  SuperPrimitivePartition part;
  std::vector<std::int32_t> first_seen(64, -1);
  std::uint32_t next = 0;
  for (auto inst : s.ground_truth.instance_of) {
    auto& id = first_seen[static_cast<std::size_t>(inst)];
    if (id < 0) id = static_cast<std::int32_t>(next++);
    part.segment_of.push_back(static_cast<std::uint32_t>(id));
  }
  part.segments.resize(next);
  std::vector<std::vector<std::uint32_t>> labels;
  for (const auto& v : s.views) labels.push_back(primitive_mask_labels(s.cloud, v.camera, v.mask, 0.05));
  const MaskAffinity source(part, labels);
  std::vector<std::vector<std::uint32_t>> clusters;
  for (std::uint32_t k = 0; k < next; ++k) clusters.push_back({k});
  std::vector<VertexPair> pairs;
  for (std::uint32_t a = 0; a < next; ++a)
    for (std::uint32_t b = a + 1; b < next; ++b) pairs.emplace_back(a, b);
  const auto want = reference::evaluate_affinities(pairs, clusters, source);
  for (int t : kThreads) {
    set_thread_count(t);
    CHECK(evaluate_affinities(pairs, clusters, source) == want);
  }
}
