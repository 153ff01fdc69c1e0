#pragma once

// Serial reference implementations of the OpenMP kernels. They share the
// per-item math with the parallel versions but iterate in the simplest
// possible order; tests require bit-identical results.

#include <optional>
#include <span>
#include <vector>

#include "psplat/feature_field.hpp"
#include "psplat/fusion.hpp"
#include "psplat/geometry.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/panoptic.hpp"

namespace psplat::reference {

/// O(N^2) exhaustive search ordered by (squared distance, index).
std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const Vec3> points, int k);

std::vector<std::uint8_t> visibility(const PrimitiveCloud& cloud, const CameraView& cam, double depth_tol);

/// View-major fusion: gather every view's observations, then reduce.
FusedFeatureCloud fuse(const PrimitiveCloud& cloud, std::span<const CameraView> views,
                       std::span<const FeatureMap> feature_maps, const FusionConfig& cfg);

FeatureMatrix field_features(const LanguageField& field, const PrimitiveCloud& cloud);

std::vector<std::uint32_t> primitive_mask_labels(const PrimitiveCloud& cloud, const CameraView& view,
                                                 const MaskMap& mask, double depth_tol);

Classification classify(const FeatureMatrix& features, const QuerySet& queries);

std::vector<std::optional<double>> evaluate_affinities(std::span<const VertexPair> pairs,
                                                       std::span<const std::vector<std::uint32_t>> clusters,
                                                       const AffinitySource& source);

}  // namespace psplat::reference
