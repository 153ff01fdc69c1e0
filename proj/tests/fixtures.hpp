#pragma once

// Scenes shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <vector>

#include "psplat/graph_clustering.hpp"
#include "psplat/supersegment.hpp"
#include "support.hpp"

namespace psplat::fixture {

struct Segmentation {
  PrimitiveCloud cloud;
  FeatureMatrix features;
  std::vector<int> truth;  // oracle region per primitive, 0 or 1
};

inline void set_feature(FeatureMatrix& f, std::size_t i, const std::vector<float>& v) {
  std::copy(v.begin(), v.end(), f.row(i).begin());
}

/// 30x30 plane z = 0; the right half (x >= 15) carries a different feature.
inline Segmentation two_label_plane() {
  Segmentation fx;
  fx.cloud = test::grid_plane(30, 0.02);
  fx.cloud.normals.assign(fx.cloud.size(), Vec3::UnitZ());
  fx.features = FeatureMatrix(fx.cloud.size(), 4);
  for (std::size_t i = 0; i < fx.cloud.size(); ++i) {
    const int side = (i % 30) >= 15 ? 1 : 0;
    fx.truth.push_back(side);
    set_feature(fx.features, i, test::unit_axis(4, side));
  }
  return fx;
}

/// Floor z = 0 and wall x = 0 meeting along the y axis, constant feature.
inline Segmentation dihedral() {
  Segmentation fx;
  for (int a = 1; a <= 20; ++a)
    for (int b = 0; b < 20; ++b) {
      fx.cloud.positions.emplace_back(a * 0.02, b * 0.02, 0.0);
      fx.cloud.normals.push_back(Vec3::UnitZ());
      fx.truth.push_back(0);
    }
  for (int a = 1; a <= 20; ++a)
    for (int b = 0; b < 20; ++b) {
      fx.cloud.positions.emplace_back(0.0, b * 0.02, a * 0.02);
      fx.cloud.normals.push_back(Vec3::UnitX());
      fx.truth.push_back(1);
    }
  fx.features = FeatureMatrix(fx.cloud.size(), 3);
  for (std::size_t i = 0; i < fx.cloud.size(); ++i) set_feature(fx.features, i, test::unit_axis(3, 0));
  return fx;
}

/// Wall y = 0 with a coplanar door patch of another class in the middle.
inline Segmentation wall_with_door() {
  Segmentation fx;
  for (int a = 0; a < 40; ++a)
    for (int b = 0; b < 40; ++b) {
      fx.cloud.positions.emplace_back(a * 0.02, 0.0, b * 0.02);
      fx.cloud.normals.push_back(Vec3::UnitY());
      const bool door = a >= 15 && a < 25 && b < 30;
      fx.truth.push_back(door ? 1 : 0);
    }
  fx.features = FeatureMatrix(fx.cloud.size(), 4);
  for (std::size_t i = 0; i < fx.cloud.size(); ++i) set_feature(fx.features, i, test::unit_axis(4, fx.truth[i]));
  return fx;
}

inline CutSchedule constant(double lambda_n, double lambda_f, int iterations = 4, std::uint32_t min_size = 20) {
  CutSchedule s;
  s.lambda_n.assign(iterations, lambda_n);
  s.lambda_f.assign(iterations, lambda_f);
  s.min_size = min_size;
  return s;
}

/// Fraction of primitives whose segment's majority region differs from theirs.
inline double misassigned(const SuperPrimitivePartition& p, const std::vector<int>& truth) {
  std::vector<std::array<int, 2>> votes(p.segment_count(), {0, 0});
  for (std::size_t i = 0; i < truth.size(); ++i) votes[p.segment_of[i]][truth[i]]++;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& v = votes[p.segment_of[i]];
    if ((v[1] > v[0] ? 1 : 0) != truth[i]) ++bad;
  }
  return double(bad) / truth.size();
}

/// Fixed affinity per pair of original vertices; clusters take the maximum
/// over their cross pairs.
class ScriptedAffinity : public AffinitySource {
 public:
  std::map<VertexPair, double> table;

  std::optional<double> affinity(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) const override {
    std::optional<double> best;
    for (auto x : a)
      for (auto y : b) {
        const auto it = table.find({std::min(x, y), std::max(x, y)});
        if (it != table.end() && (!best || it->second > *best)) best = it->second;
      }
    return best;
  }
};

/// Pairs (2k, 2k + 1) with the given affinities, plus a pair without
/// evidence at the end.
struct ScriptedMerges {
  ScriptedAffinity source;
  std::vector<VertexPair> candidates;
  std::uint32_t vertices = 0;
};

inline ScriptedMerges scripted_merges(const std::vector<double>& affinities) {
  ScriptedMerges s;
  for (std::uint32_t k = 0; k < affinities.size(); ++k) {
    s.source.table[{2 * k, 2 * k + 1}] = affinities[k];
    s.candidates.push_back({2 * k, 2 * k + 1});
  }
  const auto n = static_cast<std::uint32_t>(2 * affinities.size());
  s.candidates.push_back({n, n + 1});
  s.vertices = n + 2;
  return s;
}

/// Iteration (1-based) at which vertices a and b first share an instance,
/// or nullopt. Replays the schedule one prefix at a time.
inline std::optional<int> merge_iteration(const ScriptedMerges& s, const ClusterSchedule& schedule, std::uint32_t a,
                                          std::uint32_t b) {
  for (std::size_t t = 1; t <= schedule.thresholds.size(); ++t) {
    ClusterSchedule prefix;
    prefix.thresholds.assign(schedule.thresholds.begin(), schedule.thresholds.begin() + static_cast<std::ptrdiff_t>(t));
    const auto r = progressive_cluster(s.vertices, s.candidates, s.source, prefix);
    if (r.instances.instance_of[a] == r.instances.instance_of[b]) return static_cast<int>(t);
  }
  return std::nullopt;
}

}  // namespace psplat::fixture
