#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "psplat/common.hpp"
#include "psplat/geometry.hpp"

namespace psplat {

/// Dense H x W x D language feature image. Pixels with an all-zero vector
/// carry no feature.
struct FeatureMap {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int w, int h, int d)
      : width(w), height(h), dim(d), data(static_cast<std::size_t>(w) * h * d, 0.0f) {}

  std::span<const float> at(int row, int col) const {
    return {data.data() + (static_cast<std::size_t>(row) * width + col) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> at(int row, int col) {
    return {data.data() + (static_cast<std::size_t>(row) * width + col) * dim, static_cast<std::size_t>(dim)};
  }

  /// Rescale every nonzero pixel to unit length.
  void normalize();
};

struct FusionConfig {
  double depth_tol = 0.05;
  double eps = 1e-6;
  double gamma_max = 1e4;

  void validate() const;
};

struct FusedFeatureCloud {
  std::size_t dim = 0;
  FeatureMatrix features;
  std::vector<double> confidence;
  std::vector<std::uint32_t> obs_count;
  /// Total number of views considered (m).
  std::uint32_t view_count = 0;

  std::size_t size() const { return confidence.size(); }
  bool valid(std::size_t i) const { return obs_count[i] >= 1; }
  std::size_t valid_count() const;
};

/// Bilinear sample at a continuous pixel location, renormalized to unit
/// length. Corners outside the image or without a feature are dropped.
std::optional<std::vector<float>> sample_bilinear(const FeatureMap& fmap, const Vec2& pixel);

/// Per-view samples: present[i] marks primitives with a sample in row i.
struct ObservationSet {
  std::vector<std::uint8_t> present;
  FeatureMatrix samples;
};

ObservationSet gather_observations(const PrimitiveCloud& cloud, const CameraView& view,
                                   const FeatureMap& fmap, double depth_tol);

struct PoolResult {
  std::vector<double> feature;
  bool degenerate = false;
};

/// Mean of unit samples, renormalized. Returns nullopt for an empty list.
/// A vanishing mean falls back to the first sample and sets `degenerate`.
std::optional<PoolResult> pool(std::span<const std::span<const float>> samples);

/// Observation-over-variance confidence, clamped to gamma_max.
double confidence(std::uint32_t obs_count, std::uint32_t total_views,
                  std::span<const double> per_dim_variance, double eps, double gamma_max);

/// Population variance per dimension of the samples (0 for a single sample).
std::vector<double> sample_variance(std::span<const std::span<const float>> samples);

struct FusedPrimitive {
  std::vector<float> feature;
  double confidence = 0.0;
  std::uint32_t obs_count = 0;
};

/// Per-primitive reduction shared by every fusion path: pool, variance, and
/// confidence over samples given in view order.
FusedPrimitive reduce_samples(std::span<const std::span<const float>> samples, std::size_t dim,
                              std::uint32_t total_views, const FusionConfig& cfg);

/// Views are reduced in ascending view_id order regardless of input order.
/// Throws PipelineError if no primitive is observed by any view.
FusedFeatureCloud fuse(const PrimitiveCloud& cloud, std::span<const CameraView> views,
                       std::span<const FeatureMap> feature_maps, const FusionConfig& cfg);

}  // namespace psplat
