#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psplat/fusion.hpp"
#include "psplat/geometry.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/metrics.hpp"
#include "psplat/panoptic.hpp"

namespace psplat {

enum class ShapeKind { Box, Cylinder, Plane };

const char* to_string(ShapeKind kind);
ShapeKind shape_from_string(const std::string& name);

/// Synthetic desk-scale room: stuff surfaces (floor, walls) plus thing
/// objects standing on the floor or, for planes, flush with a wall.
struct SimConfig {
  std::uint64_t seed = 0;
  /// Room footprint (x, y) centered at the origin, and wall height.
  double room_x = 4.0;
  double room_y = 4.0;
  double room_height = 2.5;
  bool floor = true;
  bool walls = true;
  std::vector<ShapeKind> objects{ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Box, ShapeKind::Cylinder,
                                 ShapeKind::Box};
  /// Object i gets thing class i % thing_classes.size().
  std::vector<std::string> thing_classes{"chair", "table", "cabinet", "lamp"};
  /// Floor objects stay inside this radius around the room center so the
  /// camera ring sees them whole.
  double placement_radius = 1.2;
  int points_per_object = 1500;
  /// Stuff surface sampling density in points per square meter.
  double stuff_density = 250.0;
  int camera_count = 24;
  double ring_radius = 1.6;
  double camera_height = 1.5;
  int width = 320;
  int height = 240;
  int feature_dim = 16;
  double sigma_f = 0.1;
  double rho_m = 0.3;
  double sigma_n = 0.0;
  bool correlated_embeddings = false;

  void validate() const;
};

struct SimObject {
  ShapeKind shape = ShapeKind::Box;
  std::uint32_t class_index = 0;
  std::int32_t instance = 0;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();
};

struct SimView {
  CameraView camera;
  FeatureMap features;
  MaskMap mask;
  /// Primitive owning each pixel after 3x3 splatting, -1 for none.
  std::vector<std::int32_t> owner;
};

struct Scene {
  SimConfig config;
  PrimitiveCloud cloud;
  /// Noise-free normals; `cloud.normals` carries sigma_n noise.
  std::vector<Vec3> clean_normals;
  GroundTruth ground_truth;
  QuerySet queries;
  std::vector<SimView> views;
  std::vector<SimObject> objects;
  std::uint32_t noise_epoch = 0;

  std::vector<CameraView> cameras() const;
  std::vector<FeatureMap> feature_maps() const;
  std::vector<MaskMap> masks() const;
  /// Panoptic labeling equal to the ground truth (stuff merged per class).
  PanopticLabeling ground_truth_labeling() const;
};

/// Throws Error when objects cannot be placed after 1000 attempts.
Scene generate(const SimConfig& cfg);

struct NoiseDelta {
  double sigma_f = 0.0;
  double rho_m = 0.0;
  double sigma_n = 0.0;
};

/// Re-renders only noise-bearing data whose knob changed, using a stream
/// derived from the scene seed and a bumped noise epoch.
Scene perturb(const Scene& scene, const NoiseDelta& delta);

/// Orthonormal (or deliberately correlated) class embeddings from a seeded QR.
std::vector<std::vector<float>> class_embeddings(int dim, int classes, std::uint64_t seed, bool correlated);

}  // namespace psplat
