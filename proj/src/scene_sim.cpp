#include "psplat/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/QR>

namespace psplat {

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Plane: return "plane";
  }
  return "box";
}

ShapeKind shape_from_string(const std::string& name) {
  if (name == "box") return ShapeKind::Box;
  if (name == "cylinder") return ShapeKind::Cylinder;
  if (name == "plane") return ShapeKind::Plane;
  throw ConfigError("unknown shape: " + name);
}

void SimConfig::validate() const {
  if (!(room_x > 0 && room_y > 0 && room_height > 0)) throw ConfigError("simulate: room extents must be positive");
  if (objects.empty() && !floor && !walls) throw ConfigError("simulate: scene would be empty");
  if (!objects.empty() && thing_classes.empty()) throw ConfigError("simulate: objects need thing classes");
  if (points_per_object < 1 || camera_count < 1 || width < 1 || height < 1 || feature_dim < 1) {
    throw ConfigError("simulate: counts must be >= 1");
  }
  if (!(placement_radius > 0)) throw ConfigError("simulate: placement_radius must be positive");
  if (!(stuff_density > 0)) throw ConfigError("simulate: stuff_density must be positive");
  if (!(sigma_f >= 0 && rho_m >= 0 && sigma_n >= 0)) throw ConfigError("simulate: noise knobs must be >= 0");
  if (rho_m > 1.0) throw ConfigError("simulate: rho_m must be <= 1");
  if (static_cast<std::size_t>(feature_dim) < 2 + thing_classes.size()) {
    throw ConfigError("simulate: feature_dim must be at least the class count");
  }
}

std::vector<CameraView> Scene::cameras() const {
  std::vector<CameraView> out;
  for (const auto& v : views) out.push_back(v.camera);
  return out;
}

std::vector<FeatureMap> Scene::feature_maps() const {
  std::vector<FeatureMap> out;
  for (const auto& v : views) out.push_back(v.features);
  return out;
}

std::vector<MaskMap> Scene::masks() const {
  std::vector<MaskMap> out;
  for (const auto& v : views) out.push_back(v.mask);
  return out;
}

PanopticLabeling Scene::ground_truth_labeling() const {
  InstancePartition inst;
  SuperPrimitivePartition part;
  part.segment_of.resize(cloud.size());
  std::int32_t max_instance = -1;
  for (auto id : ground_truth.instance_of) max_instance = std::max(max_instance, id);
  part.segments.resize(static_cast<std::size_t>(max_instance + 1));
  std::vector<std::uint32_t> seg_class(part.segments.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto s = static_cast<std::uint32_t>(ground_truth.instance_of[i]);
    part.segment_of[i] = s;
    ++part.segments[s].count;
    seg_class[s] = static_cast<std::uint32_t>(ground_truth.class_of[i]);
  }
  inst.instance_count = static_cast<std::uint32_t>(part.segments.size());
  inst.instance_of.resize(part.segments.size());
  for (std::uint32_t s = 0; s < inst.instance_count; ++s) inst.instance_of[s] = s;
  return assemble(inst, seg_class, part, queries);
}

std::vector<std::vector<float>> class_embeddings(int dim, int classes, std::uint64_t seed, bool correlated) {
  if (classes > dim) throw ConfigError("more classes than embedding dimensions");
  Rng rng(seed);
  Eigen::MatrixXd g(dim, classes);
  for (int c = 0; c < classes; ++c) {
    for (int r = 0; r < dim; ++r) g(r, c) = rng.normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, classes);
  std::vector<std::vector<float>> out(static_cast<std::size_t>(classes), std::vector<float>(static_cast<std::size_t>(dim)));
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd e = q.col(c);
    if (correlated) e = (e + 0.6 * q.col(0)).normalized();
    for (int r = 0; r < dim; ++r) out[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = static_cast<float>(e[r]);
  }
  return out;
}

namespace {

constexpr std::uint32_t kFloorClass = 0;
constexpr std::uint32_t kWallClass = 1;
constexpr std::uint64_t kGeometryStream = 10;
constexpr std::uint64_t kEmbeddingStream = 11;
constexpr std::uint64_t kFeatureNoiseStream = 100;
constexpr std::uint64_t kMaskNoiseStream = 101;
constexpr std::uint64_t kNormalNoiseStream = 102;
constexpr double kPi = std::numbers::pi;

std::uint64_t noise_seed(std::uint64_t seed, std::uint64_t stream, std::uint32_t epoch, std::uint64_t view) {
  return derive_seed(derive_seed(derive_seed(seed, stream), epoch), view);
}

/// Planar rectangle origin + s*u + t*v, s,t in [0,1].
struct Rect {
  Vec3 origin, u, v, normal;
  double area() const { return u.norm() * v.norm(); }
};

struct Footprint {
  bool circle = false;
  Vec3 center;
  Vec3 half;  // x, y half extents (box) or radius in x (circle)
  bool contains(const Vec3& p) const {
    if (circle) return std::hypot(p.x() - center.x(), p.y() - center.y()) < half.x();
    return std::abs(p.x() - center.x()) < half.x() && std::abs(p.y() - center.y()) < half.y();
  }
};

Vec3 to_float_precision(const Vec3& v) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    // volatile: g++ -O3 otherwise folds the vectorized round trip away.
    volatile float f = static_cast<float>(v[a]);
    out[a] = f;
  }
  return out;
}

struct Sampler {
  PrimitiveCloud& cloud;
  std::vector<Vec3>& normals;
  GroundTruth& gt;

  // Float precision so the cloud survives the PLY round trip unchanged.
  void add(const Vec3& p, const Vec3& n, std::uint32_t cls, std::int32_t instance) {
    cloud.positions.push_back(to_float_precision(p));
    normals.push_back(to_float_precision(n));
    gt.class_of.push_back(static_cast<std::int32_t>(cls));
    gt.instance_of.push_back(instance);
  }
};

Vec3 sample_rect(const Rect& r, Rng& rng) { return r.origin + rng.uniform() * r.u + rng.uniform() * r.v; }

Mat4 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = Vec3::UnitX();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<1, 3>(0, 0) = right.transpose();
  m.block<1, 3>(1, 0) = down.transpose();
  m.block<1, 3>(2, 0) = forward.transpose();
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  m.topRightCorner<3, 1>() = -r * eye;
  return m;
}

void render_owner(const PrimitiveCloud& cloud, SimView& view) {
  const auto& cam = view.camera;
  const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
  std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
  view.owner.assign(pixels, -1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto proj = project(cloud.positions[i], cam);
    if (!proj) continue;
    const double col = std::floor(proj->pixel.x() + 0.5);
    const double row = std::floor(proj->pixel.y() + 0.5);
    if (col < -1 || row < -1 || col > cam.width || row > cam.height) continue;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int r = static_cast<int>(row) + dr;
        const int c = static_cast<int>(col) + dc;
        if (r < 0 || c < 0 || r >= cam.height || c >= cam.width) continue;
        const std::size_t p = static_cast<std::size_t>(r) * cam.width + c;
        if (proj->depth < zbuf[p]) {
          zbuf[p] = proj->depth;
          view.owner[p] = static_cast<std::int32_t>(i);
        }
      }
    }
  }
  view.camera.depth.assign(pixels, 0.0f);
  for (std::size_t p = 0; p < pixels; ++p) {
    if (view.owner[p] < 0) continue;
    // Quantized to millimeters so in-memory scenes match their PNG files.
    const double mm = std::min(std::round(zbuf[p] * 1000.0), 65535.0);
    view.camera.depth[p] = static_cast<float>(mm / 1000.0);
  }
}

void render_features(const Scene& scene, SimView& view, std::size_t view_index,
                     const std::vector<std::vector<float>>& embeddings) {
  const auto& cfg = scene.config;
  const auto& cam = view.camera;
  view.features = FeatureMap(cam.width, cam.height, cfg.feature_dim);
  Rng rng(noise_seed(cfg.seed, kFeatureNoiseStream, scene.noise_epoch, view_index));
  std::vector<double> buf(static_cast<std::size_t>(cfg.feature_dim));
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const std::int32_t owner = view.owner[static_cast<std::size_t>(r) * cam.width + c];
      if (owner < 0) continue;
      const auto cls = static_cast<std::size_t>(scene.ground_truth.class_of[static_cast<std::size_t>(owner)]);
      const auto& e = embeddings[cls];
      auto out = view.features.at(r, c);
      if (cfg.sigma_f == 0.0) {
        std::copy(e.begin(), e.end(), out.begin());
        continue;
      }
      for (std::size_t d = 0; d < buf.size(); ++d) buf[d] = e[d] + cfg.sigma_f * rng.normal();
      const double n = norm(std::span<const double>(buf));
      for (std::size_t d = 0; d < buf.size(); ++d) out[d] = static_cast<float>(buf[d] / n);
    }
  }
}

void render_mask(const Scene& scene, SimView& view, std::size_t view_index, std::int32_t instance_count) {
  const auto& cfg = scene.config;
  const auto& cam = view.camera;
  view.mask = MaskMap(cam.width, cam.height);
  Rng rng(noise_seed(cfg.seed, kMaskNoiseStream, scene.noise_epoch, view_index));
  std::vector<std::vector<int>> columns(static_cast<std::size_t>(instance_count));
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const std::int32_t owner = view.owner[static_cast<std::size_t>(r) * cam.width + c];
      if (owner < 0) continue;
      const std::int32_t inst = scene.ground_truth.instance_of[static_cast<std::size_t>(owner)];
      view.mask.labels[static_cast<std::size_t>(r) * cam.width + c] = static_cast<std::uint32_t>(inst + 1);
      columns[static_cast<std::size_t>(inst)].push_back(c);
    }
  }
  // Over-segmentation: split an instance's mask at its median column.
  for (std::int32_t inst = 0; inst < instance_count; ++inst) {
    const bool split = rng.uniform() < cfg.rho_m;
    auto& cols = columns[static_cast<std::size_t>(inst)];
    if (!split || cols.size() < 2) continue;
    std::nth_element(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(cols.size() / 2), cols.end());
    const int median = cols[cols.size() / 2];
    const auto split_id = static_cast<std::uint32_t>(1 + instance_count + inst);
    for (int r = 0; r < cam.height; ++r) {
      for (int c = 0; c < median; ++c) {
        auto& label = view.mask.labels[static_cast<std::size_t>(r) * cam.width + c];
        if (label == static_cast<std::uint32_t>(inst + 1)) label = split_id;
      }
    }
  }
}

void apply_normal_noise(Scene& scene) {
  const auto& cfg = scene.config;
  scene.cloud.normals = scene.clean_normals;
  if (cfg.sigma_n == 0.0) return;
  Rng rng(noise_seed(cfg.seed, kNormalNoiseStream, scene.noise_epoch, 0));
  for (auto& n : scene.cloud.normals) {
    const Vec3 noisy = n + cfg.sigma_n * Vec3(rng.normal(), rng.normal(), rng.normal());
    if (noisy.norm() > 1e-9) n = to_float_precision(noisy.normalized());
  }
}

std::int32_t instance_count_of(const Scene& scene) {
  std::int32_t m = -1;
  for (auto id : scene.ground_truth.instance_of) m = std::max(m, id);
  return m + 1;
}

std::vector<std::vector<float>> embeddings_of(const Scene& scene) {
  std::vector<std::vector<float>> e;
  for (const auto& q : scene.queries.entries) e.push_back(q.embedding);
  return e;
}

}  // namespace

Scene generate(const SimConfig& cfg) {
  cfg.validate();
  Scene scene;
  scene.config = cfg;
  Rng rng(derive_seed(cfg.seed, kGeometryStream));

  // Classes: stuff first, then things.
  std::vector<std::string> names{"floor", "wall"};
  std::vector<ClassKind> kinds{ClassKind::Stuff, ClassKind::Stuff};
  for (const auto& t : cfg.thing_classes) {
    if (std::find(names.begin(), names.end(), t) != names.end()) throw ConfigError("duplicate class name: " + t);
    names.push_back(t);
    kinds.push_back(ClassKind::Thing);
  }
  const auto embeddings = class_embeddings(cfg.feature_dim, static_cast<int>(names.size()),
                                           derive_seed(cfg.seed, kEmbeddingStream), cfg.correlated_embeddings);
  for (std::size_t c = 0; c < names.size(); ++c) scene.queries.entries.push_back({names[c], embeddings[c], kinds[c]});
  scene.ground_truth.kinds = kinds;
  scene.ground_truth.names = names;

  const double hx = cfg.room_x / 2.0;
  const double hy = cfg.room_y / 2.0;
  const Rect walls[4] = {
      {Vec3(-hx, -hy, 0), Vec3(cfg.room_x, 0, 0), Vec3(0, 0, cfg.room_height), Vec3(0, 1, 0)},
      {Vec3(hx, -hy, 0), Vec3(0, cfg.room_y, 0), Vec3(0, 0, cfg.room_height), Vec3(-1, 0, 0)},
      {Vec3(hx, hy, 0), Vec3(-cfg.room_x, 0, 0), Vec3(0, 0, cfg.room_height), Vec3(0, -1, 0)},
      {Vec3(-hx, hy, 0), Vec3(0, -cfg.room_y, 0), Vec3(0, 0, cfg.room_height), Vec3(1, 0, 0)},
  };

  // Place objects by rejection sampling.
  std::vector<Footprint> footprints;
  std::vector<std::pair<int, std::array<double, 2>>> panel_spans;  // wall, [s0, s1] in meters
  std::vector<Rect> panels;
  constexpr double kWallMargin = 0.3;
  constexpr double kGap = 0.2;
  for (std::size_t k = 0; k < cfg.objects.size(); ++k) {
    SimObject obj;
    obj.shape = cfg.objects[k];
    obj.class_index = static_cast<std::uint32_t>(2 + k % cfg.thing_classes.size());
    obj.instance = static_cast<std::int32_t>(k);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      if (obj.shape == ShapeKind::Plane) {
        const int wall = static_cast<int>(rng.below(4));
        const double w = rng.uniform(0.6, 1.0);
        const double h = std::min(rng.uniform(1.2, 2.0), cfg.room_height * 0.9);
        const double wall_len = walls[wall].u.norm();
        if (wall_len < w + 0.4) continue;
        const double s0 = rng.uniform(0.2, wall_len - w - 0.2);
        bool clash = false;
        for (const auto& [pw, span] : panel_spans) {
          if (pw == wall && s0 < span[1] + kGap && s0 + w > span[0] - kGap) clash = true;
        }
        if (clash) continue;
        const Vec3 dir = walls[wall].u.normalized();
        const Vec3 inward = walls[wall].normal;
        panels.push_back({walls[wall].origin + s0 * dir + 0.005 * inward, w * dir, Vec3(0, 0, h), inward});
        panel_spans.push_back({wall, {s0, s0 + w}});
        obj.center = panels.back().origin + 0.5 * (panels.back().u + panels.back().v);
        obj.size = Vec3(w, 0.0, h);
        placed = true;
        continue;
      }
      Footprint fp;
      if (obj.shape == ShapeKind::Box) {
        obj.size = Vec3(rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45), rng.uniform(0.4, 0.9));
        fp.half = Vec3(obj.size.x() / 2, obj.size.y() / 2, 0);
      } else {
        const double radius = rng.uniform(0.12, 0.22);
        obj.size = Vec3(2 * radius, 2 * radius, rng.uniform(0.4, 0.9));
        fp.circle = true;
        fp.half = Vec3(radius, radius, 0);
      }
      const double bound = fp.half.head<2>().norm();
      const double lim_x = hx - kWallMargin - bound;
      const double lim_y = hy - kWallMargin - bound;
      if (lim_x <= 0 || lim_y <= 0) continue;
      fp.center = Vec3(rng.uniform(-lim_x, lim_x), rng.uniform(-lim_y, lim_y), 0);
      bool clash = fp.center.head<2>().norm() + bound > cfg.placement_radius;
      for (const auto& other : footprints) {
        const double other_bound = other.half.head<2>().norm();
        if ((fp.center - other.center).head<2>().norm() < bound + other_bound + kGap) clash = true;
      }
      if (clash) continue;
      footprints.push_back(fp);
      obj.center = fp.center + Vec3(0, 0, obj.size.z() / 2);
      placed = true;
    }
    if (!placed) throw Error("simulate: could not place object " + std::to_string(k) + " after 1000 attempts");
    scene.objects.push_back(obj);
  }

  const auto object_count = static_cast<std::int32_t>(cfg.objects.size());
  Sampler sampler{scene.cloud, scene.clean_normals, scene.ground_truth};
  std::int32_t next_instance = object_count;

  if (cfg.floor) {
    const Rect floor{Vec3(-hx, -hy, 0), Vec3(cfg.room_x, 0, 0), Vec3(0, cfg.room_y, 0), Vec3(0, 0, 1)};
    const auto count = static_cast<int>(std::lround(cfg.stuff_density * floor.area()));
    const std::int32_t inst = next_instance++;
    for (int s = 0; s < count; ++s) {
      Vec3 p = sample_rect(floor, rng);
      const bool covered = std::any_of(footprints.begin(), footprints.end(),
                                       [&](const Footprint& f) { return f.contains(p); });
      if (covered) continue;
      sampler.add(p, floor.normal, kFloorClass, inst);
    }
  }
  if (cfg.walls) {
    for (int w = 0; w < 4; ++w) {
      const auto count = static_cast<int>(std::lround(cfg.stuff_density * walls[w].area()));
      const std::int32_t inst = next_instance++;
      const Vec3 dir = walls[w].u.normalized();
      for (int s = 0; s < count; ++s) {
        const Vec3 p = sample_rect(walls[w], rng);
        const double along = (p - walls[w].origin).dot(dir);
        bool behind_panel = false;
        for (std::size_t k = 0; k < panel_spans.size(); ++k) {
          if (panel_spans[k].first == w && along > panel_spans[k].second[0] && along < panel_spans[k].second[1] &&
              p.z() < panels[k].v.z()) {
            behind_panel = true;
          }
        }
        if (behind_panel) continue;
        sampler.add(p, walls[w].normal, kWallClass, inst);
      }
    }
  }

  std::size_t panel_index = 0;
  for (const auto& obj : scene.objects) {
    const std::uint32_t cls = obj.class_index;
    const std::int32_t inst = obj.instance;
    if (obj.shape == ShapeKind::Plane) {
      const Rect& r = panels[panel_index++];
      for (int s = 0; s < cfg.points_per_object; ++s) sampler.add(sample_rect(r, rng), r.normal, cls, inst);
      continue;
    }
    const Vec3 base = obj.center - Vec3(0, 0, obj.size.z() / 2);
    if (obj.shape == ShapeKind::Box) {
      const double sx = obj.size.x(), sy = obj.size.y(), sz = obj.size.z();
      const Vec3 lo = base - Vec3(sx / 2, sy / 2, 0);
      const Rect faces[5] = {
          {lo + Vec3(0, 0, sz), Vec3(sx, 0, 0), Vec3(0, sy, 0), Vec3(0, 0, 1)},
          {lo, Vec3(sx, 0, 0), Vec3(0, 0, sz), Vec3(0, -1, 0)},
          {lo + Vec3(0, sy, 0), Vec3(sx, 0, 0), Vec3(0, 0, sz), Vec3(0, 1, 0)},
          {lo, Vec3(0, sy, 0), Vec3(0, 0, sz), Vec3(-1, 0, 0)},
          {lo + Vec3(sx, 0, 0), Vec3(0, sy, 0), Vec3(0, 0, sz), Vec3(1, 0, 0)},
      };
      double total = 0;
      for (const auto& f : faces) total += f.area();
      for (int s = 0; s < cfg.points_per_object; ++s) {
        double pick = rng.uniform() * total;
        int f = 0;
        while (f < 4 && pick >= faces[f].area()) pick -= faces[f++].area();
        sampler.add(sample_rect(faces[f], rng), faces[f].normal, cls, inst);
      }
    } else {
      const double radius = obj.size.x() / 2, h = obj.size.z();
      const double side = 2 * kPi * radius * h;
      const double top = kPi * radius * radius;
      for (int s = 0; s < cfg.points_per_object; ++s) {
        if (rng.uniform() * (side + top) < side) {
          const double theta = rng.uniform(0, 2 * kPi);
          const Vec3 n(std::cos(theta), std::sin(theta), 0);
          sampler.add(base + radius * n + Vec3(0, 0, rng.uniform() * h), n, cls, inst);
        } else {
          const double rr = radius * std::sqrt(rng.uniform());
          const double theta = rng.uniform(0, 2 * kPi);
          sampler.add(base + Vec3(rr * std::cos(theta), rr * std::sin(theta), h), Vec3::UnitZ(), cls, inst);
        }
      }
    }
  }
  if (scene.cloud.positions.empty()) throw Error("simulate: generated an empty cloud");
  apply_normal_noise(scene);

  // Camera ring looking at the room center.
  const double fx = 0.5 * cfg.width;
  for (int v = 0; v < cfg.camera_count; ++v) {
    const double theta = 2 * kPi * v / cfg.camera_count;
    const Vec3 eye(cfg.ring_radius * std::cos(theta), cfg.ring_radius * std::sin(theta), cfg.camera_height);
    SimView view;
    view.camera.view_id = v;
    view.camera.width = cfg.width;
    view.camera.height = cfg.height;
    view.camera.fx = fx;
    view.camera.fy = fx;
    view.camera.cx = (cfg.width - 1) / 2.0;
    view.camera.cy = (cfg.height - 1) / 2.0;
    view.camera.world_to_camera = look_at(eye, Vec3(0, 0, 0.4));
    render_owner(scene.cloud, view);
    scene.views.push_back(std::move(view));
  }
  const std::int32_t instances = instance_count_of(scene);
  for (std::size_t v = 0; v < scene.views.size(); ++v) {
    render_features(scene, scene.views[v], v, embeddings);
    render_mask(scene, scene.views[v], v, instances);
  }
  return scene;
}

Scene perturb(const Scene& scene, const NoiseDelta& delta) {
  if (delta.sigma_f == 0.0 && delta.rho_m == 0.0 && delta.sigma_n == 0.0) return scene;
  Scene out = scene;
  out.config.sigma_f += delta.sigma_f;
  out.config.rho_m += delta.rho_m;
  out.config.sigma_n += delta.sigma_n;
  out.config.validate();
  ++out.noise_epoch;
  const auto embeddings = embeddings_of(out);
  const std::int32_t instances = instance_count_of(out);
  for (std::size_t v = 0; v < out.views.size(); ++v) {
    if (delta.sigma_f != 0.0) render_features(out, out.views[v], v, embeddings);
    if (delta.rho_m != 0.0) render_mask(out, out.views[v], v, instances);
  }
  if (delta.sigma_n != 0.0) apply_normal_noise(out);
  return out;
}

}  // namespace psplat
