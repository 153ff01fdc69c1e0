#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "psplat/panoptic.hpp"
#include "support.hpp"

using namespace psplat;

namespace {

QuerySet axis_queries(int n, int dim, std::set<int> stuff = {}) {
  QuerySet q;
  for (int c = 0; c < n; ++c) {
    q.entries.push_back({"class" + std::to_string(c), test::unit_axis(dim, c), stuff.count(c) ? ClassKind::Stuff : ClassKind::Thing});
  }
  return q;
}

SuperPrimitivePartition partition_of(std::vector<std::uint32_t> sizes) {
  SuperPrimitivePartition p;
  for (std::uint32_t s = 0; s < sizes.size(); ++s) {
    for (std::uint32_t i = 0; i < sizes[s]; ++i) p.segment_of.push_back(s);
    SuperPrimitive sp;
    sp.count = sizes[s];
    p.segments.push_back(sp);
  }
  return p;
}

}  // namespace

TEST_CASE("classify: worked examples") {
  // The fifth axis belongs to no query.
  const auto q = axis_queries(4, 5);
  FeatureMatrix f(2, 5);
  f.row(0)[2] = 1.0f;
  f.row(1)[0] = 0.5f;
  f.row(1)[1] = 0.5f;
  f.row(1)[4] = std::sqrt(0.5f);
  const auto c = classify(f, q);
  CHECK(c.class_of[0] == 2);
  CHECK(c.similarity[0] == 1.0);
  CHECK(c.class_of[1] == 0);
  CHECK(c.similarity[1] == doctest::Approx(0.5));
}

TEST_CASE("classify matches brute-force argmax and ignores query scale") {
  Rng rng(10);
  QuerySet q;
  for (int c = 0; c < 5; ++c) q.entries.push_back({"q" + std::to_string(c), test::random_unit(rng, 6), ClassKind::Thing});
  FeatureMatrix f(500, 6);
  for (std::size_t i = 0; i < 500; ++i) {
    const auto v = test::random_unit(rng, 6);
    std::copy(v.begin(), v.end(), f.row(i).begin());
  }
  const auto c = classify(f, q);
  QuerySet scaled = q;
  for (auto& e : scaled.entries) {
    const double s = rng.uniform(0.1, 10.0);
    for (auto& x : e.embedding) x = static_cast<float>(x * s);
    const double n = norm(std::span<const float>(e.embedding));
    for (auto& x : e.embedding) x = static_cast<float>(x / n);
  }
  const auto cs = classify(f, scaled);
  for (std::size_t i = 0; i < 500; ++i) {
    std::uint32_t best = 0;
    for (std::uint32_t k = 1; k < 5; ++k)
      if (dot(f.row(i), q.entries[k].embedding) > dot(f.row(i), q.entries[best].embedding)) best = k;
    CHECK(c.class_of[i] == best);
    CHECK(cs.class_of[i] == best);
  }
}

TEST_CASE("vote: majority, ties and unanimity") {
  const auto p = partition_of({3, 2, 2});
  const std::vector<std::uint32_t> classes{2, 2, 3, 4, 1, 7, 7};
  const auto v = vote(p, classes);
  CHECK(v.segment_class == std::vector<std::uint32_t>{2, 1, 7});
  CHECK(v.primitive_class == std::vector<std::uint32_t>{2, 2, 2, 1, 1, 7, 7});
}

TEST_CASE("vote never introduces an absent class") {
  Rng rng(12);
  SuperPrimitivePartition p;
  for (int i = 0; i < 400; ++i) p.segment_of.push_back(static_cast<std::uint32_t>(rng.below(20)));
  p.segments.resize(20);
  std::vector<std::uint32_t> classes(400);
  for (auto& c : classes) c = static_cast<std::uint32_t>(rng.below(6));
  const auto v = vote(p, classes);
  const auto members = p.members();
  for (std::size_t s = 0; s < 20; ++s) {
    if (members[s].empty()) continue;
    std::set<std::uint32_t> present;
    for (auto i : members[s]) present.insert(classes[i]);
    CHECK(present.count(v.segment_class[s]) == 1);
  }
}

TEST_CASE("assemble: single instance") {
  const auto p = partition_of({4});
  InstancePartition inst{{0}, 1};
  const std::vector<std::uint32_t> cls{3};
  const auto l = assemble(inst, cls, p, axis_queries(5, 5));
  CHECK(l.instance_of == std::vector<std::int32_t>(4, 0));
  CHECK(l.class_of == std::vector<std::int32_t>(4, 3));
  REQUIRE(l.instances.size() == 1);
  CHECK(l.instances[0].primitive_count == 4);
}

TEST_CASE("assemble: weighted mode and stuff merge") {
  const auto p = partition_of({100, 10, 20, 30});
  // Instance 0 = segments 0 and 1; instances 1 and 2 are both walls.
  InstancePartition inst{{0, 0, 1, 2}, 3};
  const std::vector<std::uint32_t> cls{2, 5, 1, 1};
  const auto l = assemble(inst, cls, p, axis_queries(6, 6, {1}));
  REQUIRE(l.instances.size() == 2);
  CHECK(l.instances[0].class_index == 2);
  CHECK_FALSE(l.instances[0].stuff);
  CHECK(l.instances[0].primitive_count == 110);
  CHECK(l.instances[1].class_index == 1);
  CHECK(l.instances[1].stuff);
  CHECK(l.instances[1].primitive_count == 50);
  // Class is constant within each instance.
  for (std::size_t i = 0; i < l.size(); ++i)
    CHECK(l.class_of[i] == static_cast<std::int32_t>(l.instances[l.instance_of[i]].class_index));
}

TEST_CASE("text query") {
  const auto p = partition_of({5, 5, 5, 5});
  InstancePartition inst{{0, 1, 2, 3}, 4};
  const std::vector<std::uint32_t> cls{0, 1, 0, 2};
  const auto q = axis_queries(4, 4, {2});
  std::vector<double> sim(20, 0.5);
  for (int i = 10; i < 15; ++i) sim[i] = 0.9;
  const auto l = assemble(inst, cls, p, q, sim);
  // Two chairs, best score first.
  CHECK(text_query(l, q, "class0") == std::vector<std::uint32_t>{2, 0});
  CHECK(text_query(l, q, "class1") == std::vector<std::uint32_t>{1});
  CHECK(text_query(l, q, "class2").empty());  // stuff
  CHECK(text_query(l, q, "class3").empty());
  CHECK_THROWS_AS(text_query(l, q, "sofa"), LookupError);
}

TEST_CASE("query set validation") {
  auto q = axis_queries(2, 3);
  CHECK_NOTHROW(q.validate());
  q.entries[1].name = "class0";
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q = axis_queries(2, 3);
  q.entries[0].embedding[0] = 2.0f;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}
