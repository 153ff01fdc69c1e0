#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "psplat/supersegment.hpp"
#include "fixtures.hpp"

using namespace psplat;

namespace {

using fixture::constant;
using fixture::misassigned;
using fixture::set_feature;
using Fixture = fixture::Segmentation;

void check_partition(const SuperPrimitivePartition& p, std::size_t n) {
  REQUIRE(p.primitive_count() == n);
  std::size_t total = 0;
  for (const auto& s : p.segments) {
    total += s.count;
    CHECK(std::abs(s.normal.norm() - 1.0) < 1e-4);
    CHECK(std::abs(norm(std::span<const float>(s.feature)) - 1.0) < 1e-4);
  }
  CHECK(total == n);
  // Ids are numbered by first occurrence.
  std::uint32_t next = 0;
  for (auto id : p.segment_of) {
    CHECK(id <= next);
    if (id == next) ++next;
  }
  CHECK(next == p.segment_count());
}

}  // namespace

TEST_CASE("merge predicate") {
  const std::vector<float> f{1, 0}, g{0.2f, std::sqrt(1 - 0.04f)};
  CHECK(merge_predicate(Vec3::UnitZ(), Vec3::UnitZ(), f, f, 0.9, 0.9));
  CHECK_FALSE(merge_predicate(Vec3::UnitZ(), Vec3::UnitX(), f, f, 0.9, 0.9));
  const Vec3 tilted(std::sqrt(1 - 0.95 * 0.95), 0, 0.95);
  CHECK_FALSE(merge_predicate(Vec3::UnitZ(), tilted, f, g, 0.9, 0.8));
  CHECK(merge_predicate(Vec3::UnitZ(), tilted, f, f, 0.9, 0.8));
  // Comparisons are strict.
  CHECK_FALSE(merge_predicate(Vec3::UnitZ(), Vec3::UnitZ(), f, f, 1.0, 0.5));
}

TEST_CASE("cut schedule") {
  const auto s = CutSchedule::defaults();
  REQUIRE(s.iterations() == 4);
  CHECK(s.lambda_n.front() == doctest::Approx(std::cos(15.0 * M_PI / 180)));
  CHECK(s.lambda_n.back() == doctest::Approx(std::cos(40.0 * M_PI / 180)));
  CHECK(s.lambda_f[1] == doctest::Approx(0.9));
  CHECK(s.lambda_f.back() == doctest::Approx(0.80));
  CHECK(s.min_size == 20);
  CutSchedule bad = s;
  bad.lambda_f[2] = 0.99;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.lambda_n[0] = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("single plane with constant feature is one segment") {
  auto fx = fixture::two_label_plane();
  for (std::size_t i = 0; i < fx.cloud.size(); ++i) set_feature(fx.features, i, test::unit_axis(4, 2));
  const auto p = segment(fx.cloud, fx.features, {}, knn_graph(fx.cloud, 8), CutSchedule::defaults());
  CHECK(p.segment_count() == 1);
  check_partition(p, fx.cloud.size());
}

TEST_CASE("two-label plane splits on the feature boundary") {
  const auto fx = fixture::two_label_plane();
  const auto adj = knn_graph(fx.cloud, 8);
  const auto p = segment(fx.cloud, fx.features, {}, adj, constant(std::cos(30 * M_PI / 180), 0.5));
  CHECK(p.segment_count() == 2);
  CHECK(misassigned(p, fx.truth) <= 0.01);
  check_partition(p, fx.cloud.size());
  // Language guard: no segment mixes the two classes.
  for (const auto& m : p.members()) {
    std::set<int> classes;
    for (auto i : m) classes.insert(fx.truth[i]);
    CHECK(classes.size() == 1);
  }
  // Without the feature indicator the plane is a single segment.
  SegmentOptions geometry_only;
  geometry_only.use_language = false;
  CHECK(segment(fx.cloud, fx.features, {}, adj, constant(std::cos(30 * M_PI / 180), 0.5), geometry_only)
            .segment_count() == 1);
}

TEST_CASE("dihedral splits into two planes") {
  const auto fx = fixture::dihedral();
  const auto adj = knn_graph(fx.cloud, 8);
  const auto p = segment(fx.cloud, fx.features, {}, adj, constant(std::cos(30 * M_PI / 180), 0.5));
  CHECK(p.segment_count() == 2);
  CHECK(misassigned(p, fx.truth) == 0.0);
  check_partition(p, fx.cloud.size());
}

TEST_CASE("lowering the normal threshold never adds segments") {
  auto fx = fixture::dihedral();
  // Bend the wall normals gradually so the sweep crosses several merges.
  for (std::size_t i = 400; i < fx.cloud.size(); ++i) {
    const double t = fx.cloud.positions[i].z();
    fx.cloud.normals[i] = Vec3(std::cos(t * 2), 0, std::sin(t * 2)).normalized();
  }
  const auto adj = knn_graph(fx.cloud, 8);
  std::size_t prev = SIZE_MAX;
  for (double deg = 1; deg <= 100; deg += 3) {
    const auto p = segment(fx.cloud, fx.features, {}, adj, constant(std::cos(deg * M_PI / 180), 0.5, 4, 1));
    CHECK(p.segment_count() <= prev);
    prev = p.segment_count();
  }
  CHECK(prev == 1);
}

TEST_CASE("coplanar door stays separate only with language") {
  const auto fx = fixture::wall_with_door();
  const auto adj = knn_graph(fx.cloud, 16);
  const auto with = segment(fx.cloud, fx.features, {}, adj, CutSchedule::defaults());
  SegmentOptions off;
  off.use_language = false;
  const auto without = segment(fx.cloud, fx.features, {}, adj, CutSchedule::defaults(), off);
  CHECK(with.segment_count() == 2);
  CHECK(misassigned(with, fx.truth) == 0.0);
  CHECK(without.segment_count() == 1);
}

TEST_CASE("undersized segments are absorbed") {
  auto fx = fixture::two_label_plane();
  // A 3x3 island of a third class.
  for (int y = 10; y < 13; ++y)
    for (int x = 3; x < 6; ++x) set_feature(fx.features, y * 30 + x, test::unit_axis(4, 3));
  const auto adj = knn_graph(fx.cloud, 8);
  auto sched = constant(std::cos(30 * M_PI / 180), 0.5);
  CHECK(segment(fx.cloud, fx.features, {}, adj, sched).segment_count() == 2);
  sched.min_size = 5;
  CHECK(segment(fx.cloud, fx.features, {}, adj, sched).segment_count() == 3);
}

TEST_CASE("aggregates are confidence weighted") {
  PrimitiveCloud cloud;
  cloud.positions = {{0, 0, 0}, {0.01, 0, 0}};
  cloud.normals = {Vec3::UnitZ(), Vec3::UnitZ()};
  FeatureMatrix f(2, 2);
  f.row(0)[0] = 1;
  f.row(1)[0] = 0.8f;
  f.row(1)[1] = 0.6f;
  const std::vector<double> conf{3.0, 1.0};
  const auto p = segment(cloud, f, conf, knn_graph(cloud, 1), constant(0.5, 0.5, 1, 1));
  REQUIRE(p.segment_count() == 1);
  const double fx = (3 * 1 + 0.8) , fy = 0.6;
  const double n = std::hypot(fx, fy);
  CHECK(p.segments[0].feature[0] == doctest::Approx(fx / n).epsilon(1e-6));
  CHECK(p.segments[0].feature[1] == doctest::Approx(fy / n).epsilon(1e-6));
  CHECK(p.segments[0].confidence_mass == 4.0);
}

TEST_CASE("segmentation is deterministic") {
  auto fx = fixture::two_label_plane();
  Rng rng(2);
  for (std::size_t i = 0; i < fx.cloud.size(); ++i) {
    auto v = test::unit_axis(4, fx.truth[i]);
    for (auto& x : v) x += static_cast<float>(0.1 * rng.normal());
    const double n = norm(std::span<const float>(v));
    for (auto& x : v) x = static_cast<float>(x / n);
    set_feature(fx.features, i, v);
  }
  const auto adj = knn_graph(fx.cloud, 8);
  const auto a = segment(fx.cloud, fx.features, {}, adj, CutSchedule::defaults());
  const auto b = segment(fx.cloud, fx.features, {}, adj, CutSchedule::defaults());
  CHECK(a.segment_of == b.segment_of);
  check_partition(a, fx.cloud.size());
}

TEST_CASE("segmentation input checks") {
  auto fx = fixture::two_label_plane();
  const auto adj = knn_graph(fx.cloud, 8);
  auto no_normals = fx.cloud;
  no_normals.normals.clear();
  CHECK_THROWS_AS(segment(no_normals, fx.features, {}, adj, CutSchedule::defaults()), ConfigError);
  CHECK_THROWS_AS(segment(fx.cloud, FeatureMatrix(3, 4), {}, adj, CutSchedule::defaults()), ConfigError);
}
