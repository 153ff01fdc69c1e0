#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "psplat/fusion.hpp"
#include "support.hpp"

using namespace psplat;
using psplat::test::pinhole;

namespace {

FeatureMap constant_map(int w, int h, const std::vector<float>& f) {
  FeatureMap m(w, h, static_cast<int>(f.size()));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) std::copy(f.begin(), f.end(), m.at(r, c).begin());
  return m;
}

std::vector<std::span<const float>> spans(const std::vector<std::vector<float>>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("bilinear sampling") {
  FeatureMap m(4, 4, 2);
  std::vector<float> e1{1, 0}, e2{0, 1};
  std::copy(e1.begin(), e1.end(), m.at(1, 1).begin());
  std::copy(e2.begin(), e2.end(), m.at(1, 2).begin());
  SUBCASE("exact pixel center") {
    const auto f = sample_bilinear(m, {1.0, 1.0});
    REQUIRE(f);
    CHECK((*f)[0] == 1.0f);
    CHECK((*f)[1] == 0.0f);
  }
  SUBCASE("midway between two pixels") {
    const auto f = sample_bilinear(m, {1.5, 1.0});
    REQUIRE(f);
    CHECK((*f)[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-7));
    CHECK((*f)[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-7));
  }
  SUBCASE("featureless neighborhood") { CHECK_FALSE(sample_bilinear(m, {3.0, 3.0})); }
}

TEST_CASE("gather_observations: occlusion and dimension checks") {
  auto cam = pinhole(5, 5, 10, 2, 2);
  PrimitiveCloud cloud;
  cloud.positions = {{0, 0, 2.0}, {0, 0, 3.0}};
  cam.depth.assign(25, 2.0f);
  const auto fmap = constant_map(5, 5, {0, 1, 0});
  const auto obs = gather_observations(cloud, cam, fmap, 0.05);
  CHECK(obs.present == std::vector<std::uint8_t>{1, 0});
  CHECK(obs.samples.row(0)[1] == 1.0f);
  CHECK_THROWS_AS(gather_observations(cloud, cam, FeatureMap(4, 5, 3), 0.05), ConfigError);
}

TEST_CASE("pool") {
  const std::vector<std::vector<float>> same{{0.6f, 0.8f}, {0.6f, 0.8f}, {0.6f, 0.8f}};
  auto r = pool(spans(same));
  REQUIRE(r);
  CHECK_FALSE(r->degenerate);
  CHECK(r->feature[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(r->feature[1] == doctest::Approx(0.8).epsilon(1e-7));

  const std::vector<std::vector<float>> anti{{1, 0}, {-1, 0}};
  r = pool(spans(anti));
  REQUIRE(r);
  CHECK(r->degenerate);
  CHECK(r->feature == std::vector<double>{1.0, 0.0});

  const std::vector<std::vector<float>> axes{{1, 0}, {0, 1}};
  r = pool(spans(axes));
  CHECK(r->feature[0] == doctest::Approx(M_SQRT1_2).epsilon(1e-15));
  CHECK(r->feature[1] == doctest::Approx(M_SQRT1_2).epsilon(1e-15));

  CHECK_FALSE(pool({}));
}

TEST_CASE("confidence examples") {
  const std::vector<double> zero(4, 0.0);
  CHECK(confidence(0, 6, zero, 1e-6, 1e4) == 0.0);
  CHECK(confidence(6, 6, zero, 1e-6, 1e4) == 1e4);
  const std::vector<double> half{0.25, 0.25};
  CHECK(confidence(3, 6, half, 1e-6, 1e4) == doctest::Approx(0.5 / (0.5 + 1e-6)).epsilon(1e-15));
  CHECK(confidence(3, 6, half, 1e-6, 1e4) == doctest::Approx(0.999998).epsilon(1e-6));
}

TEST_CASE("confidence is monotone in variance and observation count") {
  Rng rng(9);
  for (int t = 0; t < 1000; ++t) {
    const auto m = static_cast<std::uint32_t>(1 + rng.below(30));
    const auto obs = static_cast<std::uint32_t>(1 + rng.below(m));
    std::vector<double> v(3);
    for (auto& x : v) x = rng.uniform(0, 0.5);
    std::vector<double> more = v;
    more[rng.below(3)] += rng.uniform(0, 0.5);
    const double g = confidence(obs, m, v, 1e-6, 1e4);
    CHECK(confidence(obs, m, more, 1e-6, 1e4) <= g);
    if (obs < m) CHECK(confidence(obs + 1, m, v, 1e-6, 1e4) >= g);
  }
}

TEST_CASE("variance uses the population convention") {
  const std::vector<std::vector<float>> one{{1, 0}};
  CHECK(sample_variance(spans(one)) == std::vector<double>{0.0, 0.0});
  const std::vector<std::vector<float>> two{{1, 0}, {0, 1}};
  CHECK(sample_variance(spans(two)) == std::vector<double>{0.25, 0.25});
}

TEST_CASE("fuse: single view sees everything") {
  auto cloud = test::grid_plane(4, 0.1);
  for (auto& p : cloud.positions) p.z() = 2.0;
  const auto cam = pinhole(32, 32, 100, 0, 0);
  const std::vector<CameraView> views{cam};
  const std::vector<FeatureMap> maps{constant_map(32, 32, {0, 0, 1})};
  FusionConfig cfg;
  const auto fused = fuse(cloud, views, maps, cfg);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(fused.obs_count[i] == 1);
    CHECK(fused.features.row(i)[2] == 1.0f);
    CHECK(fused.confidence[i] == 1e4);
  }
}

TEST_CASE("fuse: visible in half of the views") {
  PrimitiveCloud cloud;
  cloud.positions = {{0, 0, 2}};
  std::vector<CameraView> views;
  std::vector<FeatureMap> maps;
  const std::vector<float> e{0, 1, 0, 0};
  for (int v = 0; v < 6; ++v) {
    // Odd views look the other way and miss the primitive.
    Mat4 pose = Mat4::Identity();
    if (v % 2) pose.topLeftCorner<3, 3>() = Eigen::AngleAxisd(M_PI, Vec3::UnitY()).toRotationMatrix();
    auto cam = pinhole(9, 9, 10, 4, 4, pose);
    cam.view_id = v;
    views.push_back(cam);
    maps.push_back(constant_map(9, 9, e));
  }
  FusionConfig cfg;
  cfg.gamma_max = 1e9;
  const auto fused = fuse(cloud, views, maps, cfg);
  CHECK(fused.obs_count[0] == 3);
  CHECK(fused.features.row(0)[1] == 1.0f);
  CHECK(fused.confidence[0] == doctest::Approx(0.5 / 1e-6));
}

TEST_CASE("fuse: no overlap is a pipeline error") {
  PrimitiveCloud cloud;
  cloud.positions = {{0, 0, -2}};
  const std::vector<CameraView> views{pinhole(4, 4, 10, 2, 2)};
  const std::vector<FeatureMap> maps{constant_map(4, 4, {1, 0})};
  CHECK_THROWS_AS(fuse(cloud, views, maps, FusionConfig{}), PipelineError);
}

TEST_CASE("fuse: view order does not matter beyond 1e-6") {
  Rng rng(21);
  PrimitiveCloud cloud;
  for (int i = 0; i < 200; ++i) cloud.positions.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2));
  std::vector<CameraView> views;
  std::vector<FeatureMap> maps;
  for (int v = 0; v < 8; ++v) {
    const double a = v * 2 * M_PI / 8;
    auto cam = pinhole(24, 24, 20, 11.5, 11.5, test::look_at({2.5 * std::cos(a), 2.5 * std::sin(a), 1.0}, {0, 0, 0}));
    cam.view_id = v;
    views.push_back(cam);
    FeatureMap m(24, 24, 5);
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 24; ++c) {
        const auto f = test::random_unit(rng, 5);
        std::copy(f.begin(), f.end(), m.at(r, c).begin());
      }
    maps.push_back(m);
  }
  FusionConfig cfg;
  const auto base = fuse(cloud, views, maps, cfg);
  // Reverse the view ids so the reduction order flips.
  std::vector<CameraView> v2 = views;
  for (auto& v : v2) v.view_id = 7 - v.view_id;
  const auto flipped = fuse(cloud, v2, maps, cfg);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(base.obs_count[i] == flipped.obs_count[i]);
    for (std::size_t d = 0; d < 5; ++d) CHECK(std::abs(base.features.row(i)[d] - flipped.features.row(i)[d]) < 1e-6);
    CHECK(std::abs(base.confidence[i] - flipped.confidence[i]) <= 1e-6 * std::max(1.0, base.confidence[i]));
    if (base.valid(i)) CHECK(std::abs(norm(base.features.row(i)) - 1.0) < 1e-4);
    else CHECK(base.confidence[i] == 0.0);
  }
  // Shuffling the input arrays without touching ids is bit-identical.
  std::vector<CameraView> v3(views.rbegin(), views.rend());
  std::vector<FeatureMap> m3(maps.rbegin(), maps.rend());
  const auto shuffled = fuse(cloud, v3, m3, cfg);
  CHECK(shuffled.features.data == base.features.data);
  CHECK(shuffled.confidence == base.confidence);
}

TEST_CASE("feature map normalization") {
  FeatureMap m(2, 1, 2);
  m.at(0, 0)[0] = 3;
  m.at(0, 0)[1] = 4;
  m.normalize();
  CHECK(m.at(0, 0)[0] == doctest::Approx(0.6));
  CHECK(m.at(0, 1)[0] == 0.0f);
}
