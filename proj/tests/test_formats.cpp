#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "psplat/formats.hpp"
#include "support.hpp"

using namespace psplat;

namespace {

FusedFeatureCloud sample_fused() {
  Rng rng(3);
  FusedFeatureCloud f;
  f.dim = 4;
  f.view_count = 5;
  f.features = FeatureMatrix(6, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    const bool seen = i != 2;
    f.obs_count.push_back(seen ? static_cast<std::uint32_t>(1 + i % 5) : 0);
    f.confidence.push_back(seen ? static_cast<float>(rng.uniform(0.1, 3.0)) : 0.0);
    if (seen) {
      const auto u = test::random_unit(rng, 4);
      std::copy(u.begin(), u.end(), f.features.row(i).begin());
    }
  }
  return f;
}

SuperPrimitivePartition sample_partition() {
  SuperPrimitivePartition p;
  p.segment_of = {0, 0, 1, 0, 2, 1};
  for (std::uint32_t c : {3u, 2u, 1u}) {
    SuperPrimitive s;
    s.count = c;
    s.normal = Vec3(0, 0, 1);
    s.feature = {0.0f, 1.0f, 0.0f};
    s.confidence_mass = 1.5;
    p.segments.push_back(s);
  }
  return p;
}

LanguageField small_field() {
  FieldConfig cfg;
  cfg.resolutions = {4, 8};
  cfg.channels = 2;
  cfg.hidden = 8;
  return LanguageField::create(cfg, Aabb{Vec3(-1, -1, 0), Vec3(1, 1, 2)}, 5, 11);
}

void put_u32(std::vector<std::uint8_t>& bytes, std::size_t at, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) bytes[at + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

bool mentions(const io::ValidationReport& r, const std::string& needle) {
  return std::any_of(r.violations.begin(), r.violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("ply round trip with normals and colors") {
  PrimitiveCloud c;
  c.positions = {Vec3(0.5, -1.25, 2.0), Vec3(3.0, 0.0, -0.125)};
  c.normals = {Vec3(0, 0, 1), Vec3(1, 0, 0)};
  c.colors = {Rgb{1, 2, 3}, Rgb{250, 128, 0}};
  const auto bytes = io::encode_ply(c);
  const auto back = io::decode_ply(bytes);
  CHECK(back.positions == c.positions);
  CHECK(back.normals == c.normals);
  CHECK(back.colors == c.colors);
  CHECK(io::encode_ply(back) == bytes);
  CHECK(io::validate_bytes(bytes).ok());
}

TEST_CASE("png16 round trip") {
  io::Image16 img{3, 2, {0, 1, 65535, 1000, 42, 7}};
  const auto back = io::decode_png16(io::encode_png16(img));
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("fmap and fused round trips") {
  FeatureMap m(2, 2, 3);
  m.at(0, 1)[2] = 1.0f;
  m.at(1, 0)[0] = 1.0f;
  const auto mb = io::encode_fmap(m);
  CHECK(io::decode_fmap(mb).data == m.data);
  CHECK(io::validate_bytes(mb).ok());

  const auto f = sample_fused();
  const auto fb = io::encode_fused(f);
  const auto back = io::decode_fused(fb);
  CHECK(back.features.data == f.features.data);
  CHECK(back.confidence == f.confidence);
  CHECK(back.obs_count == f.obs_count);
  CHECK(back.view_count == f.view_count);
  CHECK(io::encode_fused(back) == fb);
}

TEST_CASE("field round trip is stable after one float quantization") {
  const auto f = small_field();
  const auto bytes = io::encode_field(f);
  const auto back = io::decode_field(bytes);
  CHECK(io::encode_field(back) == bytes);
  const auto a = f.parameter_blocks();
  const auto b = back.parameter_blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) CHECK(b[k][i] == static_cast<double>(static_cast<float>(a[k][i])));
}

TEST_CASE("partition, instances, panoptic and ground truth round trips") {
  const auto p = sample_partition();
  const auto pb = io::encode_partition(p);
  const auto pback = io::decode_partition(pb);
  CHECK(pback.segment_of == p.segment_of);
  CHECK(pback.segments.size() == 3);
  CHECK(io::encode_partition(pback) == pb);

  InstancePartition inst{{0, 1, 0}, 2};
  const auto ib = io::encode_instances(inst);
  CHECK(io::decode_instances(ib).instance_of == inst.instance_of);
  CHECK(io::decode_instances(ib).instance_count == 2);

  PanopticLabeling l;
  l.instance_of = {0, 0, -1, 1};
  l.class_of = {3, 3, -1, 0};
  const auto lb = io::encode_panoptic(l);
  CHECK(io::decode_panoptic(lb).instance_of == l.instance_of);
  CHECK(io::decode_panoptic(lb).class_of == l.class_of);

  QuerySet q;
  q.entries = {{"floor", test::unit_axis(2, 0), ClassKind::Stuff}, {"chair", test::unit_axis(2, 1), ClassKind::Thing}};
  GroundTruth gt;
  gt.class_of = {0, 1, -1};
  gt.instance_of = {5, 0, -1};
  gt.kinds = {ClassKind::Stuff, ClassKind::Thing};
  const auto dir = test::scratch_dir("formats_gt");
  io::write_ground_truth(dir / "gt.gtlb", gt);
  const auto gback = io::read_ground_truth(dir / "gt.gtlb", q);
  CHECK(gback.class_of == gt.class_of);
  CHECK(gback.instance_of == gt.instance_of);
  CHECK(gback.names == std::vector<std::string>{"floor", "chair"});
  io::write_queries(dir / "q.json", q);
  CHECK(io::read_queries(dir / "q.json").entries[1].name == "chair");
}

TEST_CASE("cameras json round trip with depth") {
  const auto dir = test::scratch_dir("formats_cams");
  auto cam = test::pinhole(4, 3, 2.5, 1.5, 1.0, test::look_at(Vec3(1, 2, 3), Vec3(0, 0, 0)));
  cam.view_id = 7;
  cam.depth = {0.0f, 1.0f, 2.5f, 0.001f, 3.0f, 0.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 65.535f};
  cam.depth_file = "d.png";
  io::write_depth(dir / cam.depth_file, cam);
  io::write_cameras(dir / "cameras.json", std::vector<CameraView>{cam});
  const auto back = io::read_cameras(dir / "cameras.json");
  REQUIRE(back.size() == 1);
  CHECK(back[0].view_id == 7);
  CHECK(back[0].world_to_camera == cam.world_to_camera);
  CHECK(back[0].fx == cam.fx);
  for (std::size_t p = 0; p < cam.depth.size(); ++p) CHECK(back[0].depth[p] == doctest::Approx(cam.depth[p]).epsilon(1e-6));
}

TEST_CASE("decoders reject wrong magic, version and truncation") {
  auto bytes = io::encode_fused(sample_fused());
  auto bad_version = bytes;
  put_u32(bad_version, 4, 2);
  CHECK_THROWS_AS(io::decode_fused(bad_version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(io::decode_fused(truncated), FormatError);
  CHECK_THROWS_AS(io::decode_partition(bytes), FormatError);
  CHECK_THROWS_AS(io::read_fused("/nonexistent/fused.fuse"), MissingArtifactError);
  try {
    io::decode_fused(truncated);
  } catch (const FormatError& e) {
    CHECK(e.code() == ExitCode::MalformedFile);
  }
}

TEST_CASE("validate: valid FUSE has no violations") {
  const auto r = io::validate_bytes(io::encode_fused(sample_fused()));
  CHECK(r.format == "FUSE");
  CHECK(r.ok());
}

TEST_CASE("validate: truncated TRIP plane data reports expected and actual sizes") {
  auto bytes = io::encode_field(small_field());
  const std::size_t actual = bytes.size() / 3;
  bytes.resize(actual);
  const auto r = io::validate_bytes(bytes);
  CHECK(r.format == "TRIP");
  REQUIRE_FALSE(r.ok());
  CHECK(mentions(r, "size: expected "));
  CHECK(mentions(r, "actual " + std::to_string(actual) + " bytes"));
  CHECK(mentions(r, "plane data"));
}

TEST_CASE("validate: corrupt SUPR names the offending primitive") {
  auto bytes = io::encode_partition(sample_partition());
  // Primitive ids start after magic, version and three counts.
  put_u32(bytes, 20 + 4 * 4, 9);
  const auto r = io::validate_bytes(bytes);
  CHECK(r.format == "SUPR");
  CHECK(mentions(r, "primitive 4"));

  auto skipping = io::encode_partition(sample_partition());
  put_u32(skipping, 20 + 4 * 0, 1);
  CHECK(mentions(io::validate_bytes(skipping), "primitive 0"));
}

TEST_CASE("validate: other invariants") {
  auto f = sample_fused();
  f.features.row(0)[0] += 0.5f;
  CHECK(mentions(io::validate_bytes(io::encode_fused(f)), "primitive 0 feature has norm"));

  PanopticLabeling l;
  l.instance_of = {0, 0};
  l.class_of = {1, 2};
  CHECK(mentions(io::validate_bytes(io::encode_panoptic(l)), "primitive 1"));

  const std::vector<std::uint8_t> junk{'J', 'U', 'N', 'K', 1, 0, 0, 0};
  CHECK(mentions(io::validate_bytes(junk), "magic"));

  auto bytes = io::encode_fused(sample_fused());
  put_u32(bytes, 4, 7);
  CHECK(mentions(io::validate_bytes(bytes), "version: expected 1, got 7"));

  CHECK_THROWS_AS(io::validate_file("/nonexistent/x.fuse"), MissingArtifactError);
}
