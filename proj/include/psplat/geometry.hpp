#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace psplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;
using Rgb = std::array<std::uint8_t, 3>;

/// Centers of reconstructed Gaussian primitives. Normals and colors are
/// either empty or sized like positions.
struct PrimitiveCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  std::vector<Rgb> colors;

  std::size_t size() const { return positions.size(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_colors() const { return !colors.empty(); }

  /// Throws ConfigError on non-finite coordinates, empty cloud, size
  /// mismatch, or a stored normal whose norm is off by more than 1e-4.
  void validate() const;
};

/// Pinhole camera without distortion. Pixel (u, v) integer coordinates are
/// pixel centers; column = round(u), row = round(v).
struct CameraView {
  int view_id = 0;
  int width = 0;
  int height = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Mat4 world_to_camera = Mat4::Identity();
  /// Row-major H*W depth in meters, 0 = invalid. Empty when absent.
  std::vector<float> depth;

  std::string depth_file;
  std::string feature_file;
  std::string mask_file;

  bool has_depth() const { return !depth.empty(); }
  Vec3 center() const;
  Vec3 to_camera(const Vec3& world) const;
  void validate() const;
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

struct PixelIndex {
  int row = 0;
  int col = 0;
};

/// Returns nullopt for points at or behind the image plane (z <= 0).
std::optional<Projection> project(const Vec3& point, const CameraView& cam);

/// Nearest pixel for a projected location, or nullopt if outside the frame.
std::optional<PixelIndex> nearest_pixel(const Vec2& pixel, int width, int height);

/// Single-primitive visibility rule shared by all callers. Pixels whose
/// stored depth is 0 (invalid) fall back to the frustum-only test.
bool is_visible(const Vec3& point, const CameraView& cam, double depth_tol,
                Projection* projection = nullptr, PixelIndex* pixel = nullptr);

std::vector<std::uint8_t> visibility(const PrimitiveCloud& cloud, const CameraView& cam,
                                     double depth_tol);

struct NormalEstimate {
  std::vector<Vec3> normals;
  /// 1 where the neighborhood covariance vanished and +z was substituted.
  std::vector<std::uint8_t> degenerate;
};

/// PCA normals over the k nearest neighbors (plus the point itself). Each
/// normal is flipped toward the centroid of the cameras whose frustum sees
/// the primitive, or toward +z when none do.
NormalEstimate estimate_normals(const PrimitiveCloud& cloud, int k,
                                std::span<const CameraView> views = {});

/// Symmetric neighbor lists in CSR layout, sorted ascending, no self loops.
class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  explicit AdjacencyGraph(std::vector<std::vector<std::uint32_t>> lists);

  std::size_t vertex_count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t edge_count() const { return indices_.size() / 2; }
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {indices_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  /// Undirected edges (i, j) with i < j in ascending lexicographic order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges() const;

  bool operator==(const AdjacencyGraph&) const = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> indices_;
};

/// k nearest Euclidean neighbors per primitive, ties broken by lower index,
/// symmetrized by union. Grid-accelerated and OpenMP-parallel.
AdjacencyGraph knn_graph(const PrimitiveCloud& cloud, int k);

/// k nearest neighbor indices of every point (excluding itself), ordered by
/// (distance, index).
std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const Vec3> points, int k);

}  // namespace psplat
