#include "psplat/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "psplat/common.hpp"

namespace psplat {

void PrimitiveCloud::validate() const {
  if (positions.empty()) throw ConfigError("primitive cloud is empty");
  if (!normals.empty() && normals.size() != positions.size()) {
    throw ConfigError("normal count does not match position count");
  }
  if (!colors.empty() && colors.size() != positions.size()) {
    throw ConfigError("color count does not match position count");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) {
      throw ConfigError("non-finite position at primitive " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (std::abs(normals[i].norm() - 1.0) > 1e-4) {
      throw ConfigError("normal of primitive " + std::to_string(i) + " is not unit length");
    }
  }
}

Vec3 CameraView::center() const {
  const Eigen::Matrix3d r = world_to_camera.topLeftCorner<3, 3>();
  const Vec3 t = world_to_camera.topRightCorner<3, 1>();
  return -r.transpose() * t;
}

Vec3 CameraView::to_camera(const Vec3& world) const {
  return world_to_camera.topLeftCorner<3, 3>() * world + world_to_camera.topRightCorner<3, 1>();
}

void CameraView::validate() const {
  if (width < 1 || height < 1) throw ConfigError("camera " + std::to_string(view_id) + ": bad size");
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera " + std::to_string(view_id) + ": focal lengths must be positive");
  }
  const Eigen::Matrix3d r = world_to_camera.topLeftCorner<3, 3>();
  const double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6) {
    throw ConfigError("camera " + std::to_string(view_id) + ": rotation is not proper orthonormal");
  }
  const Eigen::RowVector4d last = world_to_camera.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
    throw ConfigError("camera " + std::to_string(view_id) + ": last pose row must be (0,0,0,1)");
  }
  if (!depth.empty() && depth.size() != static_cast<std::size_t>(width) * height) {
    throw ConfigError("camera " + std::to_string(view_id) + ": depth map size mismatch");
  }
}

std::optional<Projection> project(const Vec3& point, const CameraView& cam) {
  const Vec3 pc = cam.to_camera(point);
  if (pc.z() <= 0.0) return std::nullopt;
  return Projection{Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy), pc.z()};
}

std::optional<PixelIndex> nearest_pixel(const Vec2& pixel, int width, int height) {
  const double col = std::floor(pixel.x() + 0.5);
  const double row = std::floor(pixel.y() + 0.5);
  if (!(col >= 0.0 && col < width && row >= 0.0 && row < height)) return std::nullopt;
  return PixelIndex{static_cast<int>(row), static_cast<int>(col)};
}

bool is_visible(const Vec3& point, const CameraView& cam, double depth_tol, Projection* projection,
                PixelIndex* pixel) {
  const auto proj = project(point, cam);
  if (!proj) return false;
  const auto px = nearest_pixel(proj->pixel, cam.width, cam.height);
  if (!px) return false;
  if (cam.has_depth()) {
    const float stored = cam.depth[static_cast<std::size_t>(px->row) * cam.width + px->col];
    if (stored > 0.0f && std::abs(proj->depth - static_cast<double>(stored)) > depth_tol) return false;
  }
  if (projection) *projection = *proj;
  if (pixel) *pixel = *px;
  return true;
}

std::vector<std::uint8_t> visibility(const PrimitiveCloud& cloud, const CameraView& cam,
                                     double depth_tol) {
  if (!(depth_tol > 0.0)) throw ConfigError("depth_tol must be positive");
  std::vector<std::uint8_t> mask(cloud.size(), 0);
  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    mask[static_cast<std::size_t>(i)] = is_visible(cloud.positions[static_cast<std::size_t>(i)], cam, depth_tol) ? 1 : 0;
  }
  return mask;
}

AdjacencyGraph::AdjacencyGraph(std::vector<std::vector<std::uint32_t>> lists) {
  const std::size_t n = lists.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : std::vector<std::uint32_t>(lists[i])) {
      if (j >= n) throw ConfigError("adjacency index out of range");
      if (j != i) lists[j].push_back(static_cast<std::uint32_t>(i));
    }
  }
  offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& l = lists[i];
    std::erase(l, static_cast<std::uint32_t>(i));
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    offsets_[i + 1] = offsets_[i] + l.size();
  }
  indices_.reserve(offsets_[n]);
  for (const auto& l : lists) indices_.insert(indices_.end(), l.begin(), l.end());
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> AdjacencyGraph::edges() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(edge_count());
  for (std::size_t i = 0; i < vertex_count(); ++i) {
    for (std::uint32_t j : neighbors(i)) {
      if (j > i) out.emplace_back(static_cast<std::uint32_t>(i), j);
    }
  }
  return out;
}

namespace {

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

/// Uniform bucket grid over the point bounds; buckets keep ascending indices.
class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, int k) : points_(points) {
    lo_ = points[0];
    Vec3 hi = points[0];
    for (const auto& p : points) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo_).maxCoeff(), 1e-12);
    const double per_axis = std::cbrt(static_cast<double>(points.size()) / std::max(k, 1));
    cell_ = extent / std::clamp(per_axis, 1.0, 1024.0);
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::max(1, static_cast<int>(std::floor((hi[a] - lo_[a]) / cell_)) + 1);
    }
    const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      cell_of[i] = linear(cell_coords(points[i]));
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    items_.resize(points.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) {
      items_[fill[cell_of[i]]++] = static_cast<std::uint32_t>(i);
    }
  }

  std::vector<std::uint32_t> query(std::size_t self, int k, std::vector<Candidate>& scratch) const {
    const Vec3& p = points_[self];
    const auto c = cell_coords(p);
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    scratch.clear();
    for (int r = 0; r <= max_ring; ++r) {
      visit_ring(c, r, [&](std::size_t cell) {
        for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) {
          const std::uint32_t j = items_[s];
          if (j != self) scratch.push_back({squared_distance(p, points_[j]), j});
        }
      });
      if (static_cast<int>(scratch.size()) >= k) {
        std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
        const double bound = r * cell_ * (1.0 - 1e-9);
        if (scratch[static_cast<std::size_t>(k - 1)].d2 < bound * bound) break;
      }
    }
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scratch.size());
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(take), scratch.end());
    std::vector<std::uint32_t> out(take);
    for (std::size_t t = 0; t < take; ++t) out[t] = scratch[t].index;
    return out;
  }

 private:
  std::array<int, 3> cell_coords(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
    }
    return c;
  }

  std::size_t linear(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  }

  template <typename F>
  void visit_ring(const std::array<int, 3>& c, int r, F&& f) const {
    for (int z = c[2] - r; z <= c[2] + r; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (int y = c[1] - r; y <= c[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        const bool yz_shell = std::abs(z - c[2]) == r || std::abs(y - c[1]) == r;
        for (int x = c[0] - r; x <= c[0] + r; ++x) {
          if (x < 0 || x >= dims_[0]) continue;
          if (!yz_shell && std::abs(x - c[0]) != r) continue;
          f(linear({x, y, z}));
        }
      }
    }
  }

  std::span<const Vec3> points_;
  Vec3 lo_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> items_;
};

}  // namespace

std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const Vec3> points, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (points.size() <= static_cast<std::size_t>(k)) {
    throw ConfigError("need more than k=" + std::to_string(k) + " primitives");
  }
  const PointGrid grid(points, k);
  std::vector<std::vector<std::uint32_t>> lists(points.size());
  const auto n = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel
  {
    std::vector<Candidate> scratch;
#pragma omp for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      lists[static_cast<std::size_t>(i)] = grid.query(static_cast<std::size_t>(i), k, scratch);
    }
  }
  return lists;
}

AdjacencyGraph knn_graph(const PrimitiveCloud& cloud, int k) {
  return AdjacencyGraph(knn_lists(cloud.positions, k));
}

NormalEstimate estimate_normals(const PrimitiveCloud& cloud, int k, std::span<const CameraView> views) {
  if (k < 3) throw ConfigError("normal estimation needs k >= 3");
  const auto lists = knn_lists(cloud.positions, k);
  NormalEstimate out;
  out.normals.resize(cloud.size());
  out.degenerate.assign(cloud.size(), 0);
  std::vector<Vec3> centers;
  for (const auto& v : views) centers.push_back(v.center());

  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < n; ++si) {
    const auto i = static_cast<std::size_t>(si);
    const Vec3& p = cloud.positions[i];
    Vec3 mean = p;
    for (std::uint32_t j : lists[i]) mean += cloud.positions[j];
    mean /= static_cast<double>(lists[i].size() + 1);
    Eigen::Matrix3d cov = (p - mean) * (p - mean).transpose();
    for (std::uint32_t j : lists[i]) {
      const Vec3 d = cloud.positions[j] - mean;
      cov += d * d.transpose();
    }
    Vec3 normal = Vec3::UnitZ();
    if (cov.trace() > 1e-30) {
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
      normal = eig.eigenvectors().col(0).normalized();
    } else {
      out.degenerate[i] = 1;
      out.normals[i] = normal;
      continue;
    }
    Vec3 observer_sum = Vec3::Zero();
    int observers = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto proj = project(p, views[v]);
      if (proj && nearest_pixel(proj->pixel, views[v].width, views[v].height)) {
        observer_sum += centers[v];
        ++observers;
      }
    }
    const Vec3 toward = observers > 0 ? Vec3(observer_sum / observers - p) : Vec3::UnitZ();
    if (normal.dot(toward) < 0.0) normal = -normal;
    out.normals[i] = normal;
  }
  return out;
}

}  // namespace psplat
