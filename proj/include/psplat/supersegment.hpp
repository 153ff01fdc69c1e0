#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "psplat/common.hpp"
#include "psplat/geometry.hpp"

namespace psplat {

/// Per-iteration merge thresholds for the graph cuts.
struct CutSchedule {
  std::vector<double> lambda_n;
  std::vector<double> lambda_f;
  std::uint32_t min_size = 20;

  /// Normal threshold is cos(angle) with the angle interpolated linearly
  /// from `angle_start_deg` to `angle_end_deg`; the feature threshold is
  /// interpolated linearly from `f_start` to `f_end`.
  static CutSchedule linear(int iterations, double angle_start_deg, double angle_end_deg, double f_start,
                            double f_end, std::uint32_t min_size);
  static CutSchedule defaults() { return linear(4, 15.0, 40.0, 0.95, 0.80, 20); }

  std::size_t iterations() const { return lambda_n.size(); }
  void validate() const;
};

/// Both the normal and the feature cosine must strictly exceed their thresholds.
bool merge_predicate(const Vec3& n_i, const Vec3& n_j, std::span<const float> f_i, std::span<const float> f_j,
                     double lambda_n, double lambda_f);

struct SuperPrimitive {
  std::uint32_t count = 0;
  Vec3 normal = Vec3::UnitZ();
  std::vector<float> feature;
  double confidence_mass = 0.0;
};

/// Partition of primitives into super-primitives with consecutive ids,
/// numbered by first occurrence in primitive order.
struct SuperPrimitivePartition {
  std::vector<std::uint32_t> segment_of;
  std::vector<SuperPrimitive> segments;

  std::size_t primitive_count() const { return segment_of.size(); }
  std::size_t segment_count() const { return segments.size(); }
  std::size_t feature_dim() const { return segments.empty() ? 0 : segments.front().feature.size(); }
  /// Member primitive lists, ascending.
  std::vector<std::vector<std::uint32_t>> members() const;
};

struct SegmentOptions {
  /// When false the feature indicator is ignored (geometry-only cutting).
  bool use_language = true;
};

/// Language-guided graph cuts. `features` are unit per-primitive language
/// features; `confidence` weights the aggregate updates (empty = uniform).
SuperPrimitivePartition segment(const PrimitiveCloud& cloud, const FeatureMatrix& features,
                                std::span<const double> confidence, const AdjacencyGraph& adj,
                                const CutSchedule& sched, const SegmentOptions& options = {});

}  // namespace psplat
