#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "psplat/geometry.hpp"
#include "psplat/supersegment.hpp"

namespace psplat {

/// 2D instance mask raster; label 0 means unlabeled.
struct MaskMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> labels;

  MaskMap() = default;
  MaskMap(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint32_t at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
};

/// Normalized histogram of mask ids, sorted by id.
struct MaskLabelDistribution {
  std::vector<std::pair<std::uint32_t, double>> probabilities;
  std::uint32_t visible_count = 0;

  bool empty() const { return probabilities.empty(); }
};

/// Nearest-pixel mask label of every visible primitive in one view (0 for
/// hidden, out-of-frame, or unlabeled). OpenMP-parallel.
std::vector<std::uint32_t> primitive_mask_labels(const PrimitiveCloud& cloud, const CameraView& view,
                                                 const MaskMap& mask, double depth_tol);

/// Count-and-normalize over the given member primitives.
MaskLabelDistribution mask_distribution(std::span<const std::uint32_t> members,
                                        std::span<const std::uint32_t> labels_in_view);
MaskLabelDistribution mask_distribution(std::span<const std::uint32_t> members, const CameraView& view,
                                        const MaskMap& mask, const PrimitiveCloud& cloud, double depth_tol);

/// Base-2 Jensen-Shannon divergence in [0, 1]; nullopt when either side is empty.
std::optional<double> jsd(const MaskLabelDistribution& p, const MaskLabelDistribution& q);

/// Multi-view affinity over views where both vertices have evidence:
/// mean of (vis_i/|V_i|)(vis_j/|V_j|)(1 - jsd). nullopt when no view qualifies.
std::optional<double> pair_affinity(std::span<const MaskLabelDistribution> per_view_i, std::size_t size_i,
                                    std::span<const MaskLabelDistribution> per_view_j, std::size_t size_j);

using VertexPair = std::pair<std::uint32_t, std::uint32_t>;

/// Super-primitive pairs joined by at least one primitive edge, A < B, sorted.
std::vector<VertexPair> candidate_edges(const SuperPrimitivePartition& partition, const AdjacencyGraph& adj);

/// Affinity between two clusters, each given as its member super-primitive ids.
class AffinitySource {
 public:
  virtual ~AffinitySource() = default;
  virtual std::optional<double> affinity(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) const = 0;
};

/// Affinity from per-view mask label histograms of super-primitives.
class MaskAffinity : public AffinitySource {
 public:
  /// `labels_per_view[v][i]` is the mask label of primitive i in view v.
  MaskAffinity(const SuperPrimitivePartition& partition,
               std::span<const std::vector<std::uint32_t>> labels_per_view);

  std::optional<double> affinity(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) const override;

  /// Merged distribution of a cluster in one view.
  MaskLabelDistribution distribution(std::span<const std::uint32_t> cluster, std::size_t view) const;
  std::size_t view_count() const { return histograms_.size(); }

 private:
  using Histogram = std::vector<std::pair<std::uint32_t, std::uint32_t>>;
  std::vector<std::vector<Histogram>> histograms_;  // [view][segment]
  std::vector<std::uint32_t> sizes_;
};

struct ClusterSchedule {
  std::vector<double> thresholds{0.9, 0.8, 0.7, 0.6};

  /// `iterations` thresholds evenly spaced from start to end, rounded to 12
  /// decimals so that e.g. 0.9 -> 0.6 over 4 steps yields exact literals.
  static ClusterSchedule linear(double start, double end, int iterations);
  void validate() const;
};

struct InstancePartition {
  std::vector<std::uint32_t> instance_of;
  std::uint32_t instance_count = 0;
};

struct ClusterIteration {
  double threshold = 0.0;
  std::uint32_t candidate_pairs = 0;
  std::uint32_t merges = 0;
  std::uint32_t instances_after = 0;
};

struct ClusterResult {
  InstancePartition instances;
  std::vector<ClusterIteration> iterations;
};

/// Pairwise affinity of every candidate pair. OpenMP-parallel over pairs.
std::vector<std::optional<double>> evaluate_affinities(std::span<const VertexPair> pairs,
                                                       std::span<const std::vector<std::uint32_t>> clusters,
                                                       const AffinitySource& source);

/// Progressive clustering: every iteration recomputes affinities over the
/// current candidate pairs, then unions pairs above the threshold in
/// descending-affinity order. Instance ids are consecutive, ordered by the
/// smallest member vertex.
ClusterResult progressive_cluster(std::size_t vertex_count, std::span<const VertexPair> candidates,
                                  const AffinitySource& source, const ClusterSchedule& schedule);

}  // namespace psplat
