#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "psplat/common.hpp"
#include "psplat/geometry.hpp"

namespace psplat::test {

inline CameraView pinhole(int w, int h, double f, double cx, double cy, const Mat4& pose = Mat4::Identity()) {
  CameraView c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = f;
  c.cx = cx;
  c.cy = cy;
  c.world_to_camera = pose;
  return c;
}

/// World-to-camera pose for a camera at `eye` looking at `target`
/// (x right, y down, z forward).
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 fwd = (target - eye).normalized();
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<1, 3>(0, 0) = right.transpose();
  m.block<1, 3>(1, 0) = down.transpose();
  m.block<1, 3>(2, 0) = fwd.transpose();
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  m.topRightCorner<3, 1>() = -r * eye;
  return m;
}

/// n x n grid on z = 0 with the given spacing, row-major.
inline PrimitiveCloud grid_plane(int n, double spacing) {
  PrimitiveCloud c;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) c.positions.emplace_back(x * spacing, y * spacing, 0.0);
  }
  return c;
}

inline std::vector<float> unit_axis(int dim, int axis) {
  std::vector<float> v(dim, 0.0f);
  v[axis] = 1.0f;
  return v;
}

inline std::vector<float> random_unit(Rng& rng, int dim) {
  std::vector<float> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    n += double(x) * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x = static_cast<float>(x / n);
  return v;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("psplat_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace psplat::test
