#include "psplat/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "psplat/formats.hpp"
#include "psplat/metrics.hpp"
#include "psplat/panoptic.hpp"

namespace psplat {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

// ---- Config ----------------------------------------------------------------

namespace {

void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& section) {
  if (!obj.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key: " + (section.empty() ? key : section + "." + key));
  }
}

template <typename T>
void get(const Json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config key " + section + "." + key + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : (base / p).lexically_normal(); }

std::string rel(const PipelineConfig& cfg, const fs::path& p) {
  const fs::path r = p.lexically_relative(cfg.base_dir);
  return (r.empty() ? p : r).generic_string();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const Json& j, const fs::path& base_dir) {
  check_keys(j, {"paths", "seed", "deterministic", "threads", "simulate", "fusion", "k", "field", "distill",
                 "supersegment", "cluster", "export"},
             "");
  PipelineConfig cfg;
  cfg.base_dir = fs::absolute(base_dir).lexically_normal();
  get(j, "seed", cfg.seed, "");
  get(j, "deterministic", cfg.deterministic, "");
  get(j, "threads", cfg.threads, "");
  get(j, "k", cfg.k, "");

  std::string scene = "scene", cloud, cameras, queries, gt, out = "out";
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, {"scene_dir", "cloud", "cameras", "queries", "ground_truth", "output_dir"}, "paths");
    get(p, "scene_dir", scene, "paths");
    get(p, "cloud", cloud, "paths");
    get(p, "cameras", cameras, "paths");
    get(p, "queries", queries, "paths");
    get(p, "ground_truth", gt, "paths");
    get(p, "output_dir", out, "paths");
  }
  cfg.scene_dir = resolve(cfg.base_dir, scene);
  cfg.cloud = cloud.empty() ? cfg.scene_dir / "cloud.ply" : resolve(cfg.base_dir, cloud);
  cfg.cameras = cameras.empty() ? cfg.scene_dir / "cameras.json" : resolve(cfg.base_dir, cameras);
  cfg.queries = queries.empty() ? cfg.scene_dir / "queries.json" : resolve(cfg.base_dir, queries);
  cfg.ground_truth = gt.empty() ? cfg.scene_dir / "ground_truth.gtlb" : resolve(cfg.base_dir, gt);
  cfg.output_dir = resolve(cfg.base_dir, out);

  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    const std::string sec = "simulate";
    check_keys(s, {"room_x", "room_y", "room_height", "floor", "walls", "objects", "thing_classes",
                   "placement_radius", "points_per_object", "stuff_density", "camera_count", "ring_radius", "camera_height", "width",
                   "height", "feature_dim", "sigma_f", "rho_m", "sigma_n", "correlated_embeddings"},
               sec);
    auto& sc = cfg.simulate;
    get(s, "room_x", sc.room_x, sec);
    get(s, "room_y", sc.room_y, sec);
    get(s, "room_height", sc.room_height, sec);
    get(s, "floor", sc.floor, sec);
    get(s, "walls", sc.walls, sec);
    if (s.contains("objects")) {
      std::vector<std::string> names;
      get(s, "objects", names, sec);
      sc.objects.clear();
      for (const auto& n : names) sc.objects.push_back(shape_from_string(n));
    }
    get(s, "thing_classes", sc.thing_classes, sec);
    get(s, "placement_radius", sc.placement_radius, sec);
    get(s, "points_per_object", sc.points_per_object, sec);
    get(s, "stuff_density", sc.stuff_density, sec);
    get(s, "camera_count", sc.camera_count, sec);
    get(s, "ring_radius", sc.ring_radius, sec);
    get(s, "camera_height", sc.camera_height, sec);
    get(s, "width", sc.width, sec);
    get(s, "height", sc.height, sec);
    get(s, "feature_dim", sc.feature_dim, sec);
    get(s, "sigma_f", sc.sigma_f, sec);
    get(s, "rho_m", sc.rho_m, sec);
    get(s, "sigma_n", sc.sigma_n, sec);
    get(s, "correlated_embeddings", sc.correlated_embeddings, sec);
  }
  if (j.contains("fusion")) {
    const auto& s = j.at("fusion");
    check_keys(s, {"depth_tol", "eps", "gamma_max"}, "fusion");
    get(s, "depth_tol", cfg.fusion.depth_tol, "fusion");
    get(s, "eps", cfg.fusion.eps, "fusion");
    get(s, "gamma_max", cfg.fusion.gamma_max, "fusion");
  }
  if (j.contains("field")) {
    const auto& s = j.at("field");
    check_keys(s, {"resolutions", "channels", "hidden", "plane_init", "aabb_margin"}, "field");
    get(s, "resolutions", cfg.field.resolutions, "field");
    get(s, "channels", cfg.field.channels, "field");
    get(s, "hidden", cfg.field.hidden, "field");
    get(s, "plane_init", cfg.field.plane_init, "field");
    get(s, "aabb_margin", cfg.field.aabb_margin, "field");
  }
  if (j.contains("distill")) apply_distill(j.at("distill"), cfg.distill);
  if (j.contains("supersegment")) {
    const auto& s = j.at("supersegment");
    const std::string sec = "supersegment";
    check_keys(s, {"iterations", "angle_start_deg", "angle_end_deg", "f_start", "f_end", "min_size", "use_language"},
               sec);
    get(s, "iterations", cfg.cut.iterations, sec);
    get(s, "angle_start_deg", cfg.cut.angle_start_deg, sec);
    get(s, "angle_end_deg", cfg.cut.angle_end_deg, sec);
    get(s, "f_start", cfg.cut.f_start, sec);
    get(s, "f_end", cfg.cut.f_end, sec);
    get(s, "min_size", cfg.cut.min_size, sec);
    get(s, "use_language", cfg.cut.use_language, sec);
  }
  if (j.contains("cluster")) {
    const auto& s = j.at("cluster");
    check_keys(s, {"thresholds", "start", "end", "iterations", "depth_tol", "occlusion"}, "cluster");
    get(s, "depth_tol", cfg.cluster_depth_tol, "cluster");
    get(s, "occlusion", cfg.cluster_occlusion, "cluster");
    if (s.contains("thresholds")) {
      get(s, "thresholds", cfg.cluster.thresholds, "cluster");
    } else if (s.contains("start") || s.contains("end") || s.contains("iterations")) {
      double start = 0.9, end = 0.6;
      int iterations = 4;
      get(s, "start", start, "cluster");
      get(s, "end", end, "cluster");
      get(s, "iterations", iterations, "cluster");
      cfg.cluster = ClusterSchedule::linear(start, end, iterations);
    }
  }
  if (j.contains("export")) {
    check_keys(j.at("export"), {"color_by"}, "export");
    get(j.at("export"), "color_by", cfg.color_by, "export");
  }
  cfg.simulate.seed = cfg.seed;
  if (!(j.contains("distill") && j.at("distill").contains("seed"))) cfg.distill.seed = cfg.seed;
  return cfg;
}

void apply_distill(const Json& s, DistillConfig& d) {
  check_keys(s, {"iterations", "batch", "lr", "beta1", "beta2", "eps", "eval_every", "seed"}, "distill");
  get(s, "iterations", d.iterations, "distill");
  get(s, "batch", d.batch, "distill");
  get(s, "lr", d.lr, "distill");
  get(s, "beta1", d.beta1, "distill");
  get(s, "beta2", d.beta2, "distill");
  get(s, "eps", d.eps, "distill");
  get(s, "eval_every", d.eval_every, "distill");
  get(s, "seed", d.seed, "distill");
}

void PipelineConfig::load_distill_config(const fs::path& path) {
  const auto bytes = read_file(path);
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
  apply_distill(j, distill);
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  const auto bytes = read_file(path);
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
  return from_json(j, fs::absolute(path).parent_path());
}

void PipelineConfig::validate() const {
  fusion.validate();
  field.validate();
  distill.validate();
  cut.schedule().validate();
  cluster.validate();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(cluster_depth_tol > 0.0)) throw ConfigError("cluster.depth_tol must be positive");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  io::color_by_from_string(color_by);
}

OJson PipelineConfig::parameters() const {
  OJson p;
  p["seed"] = seed;
  p["deterministic"] = deterministic;
  p["k"] = k;
  p["fusion"] = {{"depth_tol", fusion.depth_tol}, {"eps", fusion.eps}, {"gamma_max", fusion.gamma_max}};
  p["field"] = {{"resolutions", field.resolutions},
                {"channels", field.channels},
                {"hidden", field.hidden},
                {"plane_init", field.plane_init},
                {"aabb_margin", field.aabb_margin}};
  p["distill"] = {{"iterations", distill.iterations}, {"batch", distill.batch}, {"lr", distill.lr},
                  {"beta1", distill.beta1},           {"beta2", distill.beta2}, {"eps", distill.eps},
                  {"eval_every", distill.eval_every}};
  const auto sched = cut.schedule();
  p["supersegment"] = {{"lambda_n", sched.lambda_n},
                       {"lambda_f", sched.lambda_f},
                       {"min_size", cut.min_size},
                       {"use_language", cut.use_language}};
  p["cluster"] = {{"thresholds", cluster.thresholds}, {"depth_tol", cluster_depth_tol}, {"occlusion", cluster_occlusion}};
  return p;
}

// ---- Scene output ----------------------------------------------------------

OJson write_scene(const Scene& scene, const fs::path& dir) {
  fs::create_directories(dir / "views");
  io::write_ply(dir / "cloud.ply", scene.cloud);
  std::vector<CameraView> cams;
  OJson views = OJson::array();
  for (const auto& v : scene.views) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "views/view_%03d", v.camera.view_id);
    CameraView cam = v.camera;
    cam.depth_file = std::string(stem) + "_depth.png";
    cam.feature_file = std::string(stem) + ".fmap";
    cam.mask_file = std::string(stem) + "_mask.png";
    io::write_depth(dir / cam.depth_file, cam);
    io::write_fmap(dir / cam.feature_file, v.features);
    io::write_mask(dir / cam.mask_file, v.mask);
    views.push_back({{"view_id", cam.view_id},
                     {"depth", cam.depth_file},
                     {"features", cam.feature_file},
                     {"mask", cam.mask_file}});
    cam.depth.clear();
    cams.push_back(std::move(cam));
  }
  io::write_cameras(dir / "cameras.json", cams);
  io::write_queries(dir / "queries.json", scene.queries);
  io::write_ground_truth(dir / "ground_truth.gtlb", scene.ground_truth);

  const auto& c = scene.config;
  OJson objects = OJson::array();
  for (const auto& o : scene.objects) {
    objects.push_back({{"shape", to_string(o.shape)},
                       {"class", scene.queries.entries[o.class_index].name},
                       {"instance", o.instance},
                       {"center", {o.center.x(), o.center.y(), o.center.z()}},
                       {"size", {o.size.x(), o.size.y(), o.size.z()}}});
  }
  OJson manifest;
  manifest["cloud"] = "cloud.ply";
  manifest["cameras"] = "cameras.json";
  manifest["queries"] = "queries.json";
  manifest["ground_truth"] = "ground_truth.gtlb";
  manifest["views"] = views;
  manifest["objects"] = objects;
  manifest["primitive_count"] = scene.cloud.size();
  manifest["seed"] = c.seed;
  manifest["noise"] = {{"sigma_f", c.sigma_f}, {"rho_m", c.rho_m}, {"sigma_n", c.sigma_n}};
  write_file_atomic(dir / "scene_manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

// ---- Stages ----------------------------------------------------------------

namespace {

/// Records input and output digests for a stage report.
class DigestLog {
 public:
  explicit DigestLog(const PipelineConfig& cfg) : cfg_(cfg) {}
  void input(const fs::path& p) { inputs_[rel(cfg_, p)] = digest_file(p); }
  void output(const fs::path& p) { outputs_[rel(cfg_, p)] = digest_file(p); }
  const OJson& inputs() const { return inputs_; }
  const OJson& outputs() const { return outputs_; }

 private:
  const PipelineConfig& cfg_;
  OJson inputs_ = OJson::object();
  OJson outputs_ = OJson::object();
};

/// Fails with exit 2 if `artifact` is absent and exit 5 if it, or anything
/// its producer consumed, changed since the producer's report was written.
void require_fresh(const PipelineConfig& cfg, const fs::path& artifact, const std::string& producer) {
  if (!fs::exists(artifact)) throw MissingArtifactError(artifact);
  const fs::path report_path = cfg.report_path(producer);
  if (!fs::exists(report_path)) return;  // externally supplied artifact
  const auto bytes = read_file(report_path);
  Json report;
  try {
    report = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw FormatError(report_path.string() + ": " + e.what(), e.byte);
  }
  const std::string key = rel(cfg, artifact);
  const Json outputs = report.value("outputs", Json::object());
  if (!outputs.contains(key)) return;
  if (outputs.at(key).get<std::string>() != digest_file(artifact)) {
    throw StaleArtifactError(artifact.string() + " changed after the " + producer + " stage wrote it; rerun " +
                             producer);
  }
  const Json inputs = report.value("inputs", Json::object());
  for (const auto& [in_key, digest] : inputs.items()) {
    const fs::path in = resolve(cfg.base_dir, in_key);
    if (!fs::exists(in) || digest_file(in) != digest.get<std::string>()) {
      throw StaleArtifactError(in.string() + " changed since the " + producer + " stage ran; rerun " + producer);
    }
  }
}

PrimitiveCloud load_cloud(const PipelineConfig& cfg, DigestLog& log) {
  require_fresh(cfg, cfg.cloud, "simulate");
  auto cloud = io::read_ply(cfg.cloud);
  cloud.validate();
  log.input(cfg.cloud);
  return cloud;
}

std::vector<CameraView> load_cameras(const PipelineConfig& cfg, DigestLog& log) {
  require_fresh(cfg, cfg.cameras, "simulate");
  auto views = io::read_cameras(cfg.cameras);
  log.input(cfg.cameras);
  for (const auto& v : views) {
    if (v.depth_file.empty()) throw MissingArtifactError("depth_file of view " + std::to_string(v.view_id));
    log.input(v.depth_file);
  }
  return views;
}

const PrimitiveCloud& with_normals(PrimitiveCloud& cloud, const PipelineConfig& cfg,
                                   std::span<const CameraView> views) {
  if (!cloud.has_normals()) {
    spdlog::info("estimating normals with k={}", cfg.k);
    cloud.normals = estimate_normals(cloud, cfg.k, views).normals;
  }
  return cloud;
}

void run_simulate(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  const Scene scene = generate(cfg.simulate);
  const auto manifest = write_scene(scene, cfg.scene_dir);
  for (const char* key : {"cloud", "cameras", "queries", "ground_truth"}) {
    log.output(cfg.scene_dir / manifest[key].get<std::string>());
  }
  for (const auto& v : manifest["views"]) {
    for (const char* key : {"depth", "features", "mask"}) log.output(cfg.scene_dir / v[key].get<std::string>());
  }
  log.output(cfg.scene_dir / "scene_manifest.json");
  counts["primitives"] = scene.cloud.size();
  counts["views"] = scene.views.size();
  counts["objects"] = scene.objects.size();
}

void run_fuse(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  const auto cloud = load_cloud(cfg, log);
  const auto views = load_cameras(cfg, log);
  std::vector<FeatureMap> fmaps;
  for (const auto& v : views) {
    if (v.feature_file.empty()) throw MissingArtifactError("feature_file of view " + std::to_string(v.view_id));
    auto fmap = io::read_fmap(v.feature_file);
    fmap.normalize();
    fmaps.push_back(std::move(fmap));
    log.input(v.feature_file);
  }
  const auto fused = fuse(cloud, views, fmaps, cfg.fusion);
  io::write_fused(cfg.fused_path(), fused);
  log.output(cfg.fused_path());
  counts["primitives"] = fused.size();
  counts["valid_primitives"] = fused.valid_count();
  counts["views"] = fused.view_count;
}

void run_distill(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.fused_path(), "fuse");
  const auto cloud = load_cloud(cfg, log);
  const auto fused = io::read_fused(cfg.fused_path());
  log.input(cfg.fused_path());
  if (fused.size() != cloud.size()) throw ConfigError("fused cloud does not match the primitive cloud");
  const DistillConfig& dc = cfg.distill;
  auto field = LanguageField::create(cfg.field, Aabb::around(cloud.positions, cfg.field.aabb_margin),
                                     static_cast<int>(fused.dim), derive_seed(cfg.seed, 1));
  const auto report = distill(field, fused, cloud, dc);
  io::write_field(cfg.field_path(), field);
  log.output(cfg.field_path());
  OJson history = OJson::array();
  for (const auto& [it, loss] : report.full_loss) history.push_back({it, loss});
  counts["full_loss"] = history;
  counts["final_batch_loss"] = report.loss_history.empty() ? 0.0 : report.loss_history.back();
  counts["final_loss"] = dataset_loss(field, fused, cloud);
}

FeatureMatrix field_features_from(const PipelineConfig& cfg, const PrimitiveCloud& cloud, DigestLog& log) {
  require_fresh(cfg, cfg.field_path(), "distill");
  const auto field = io::read_field(cfg.field_path());
  log.input(cfg.field_path());
  return field_features(field, cloud);
}

void run_supersegment(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.field_path(), "distill");
  require_fresh(cfg, cfg.fused_path(), "fuse");
  auto cloud = load_cloud(cfg, log);
  const auto fused = io::read_fused(cfg.fused_path());
  log.input(cfg.fused_path());
  const auto features = field_features_from(cfg, cloud, log);
  std::vector<CameraView> views;
  if (!cloud.has_normals()) views = load_cameras(cfg, log);
  with_normals(cloud, cfg, views);
  const auto adj = knn_graph(cloud, cfg.k);
  const auto partition =
      segment(cloud, features, fused.confidence, adj, cfg.cut.schedule(), SegmentOptions{cfg.cut.use_language});
  io::write_partition(cfg.partition_path(), partition);
  log.output(cfg.partition_path());
  counts["segment_count"] = partition.segment_count();
  counts["graph_edges"] = adj.edge_count();
}

void run_cluster(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.partition_path(), "supersegment");
  const auto cloud = load_cloud(cfg, log);
  const auto views = load_cameras(cfg, log);
  const auto partition = io::read_partition(cfg.partition_path());
  log.input(cfg.partition_path());
  if (partition.primitive_count() != cloud.size()) throw ConfigError("partition does not match the primitive cloud");
  std::vector<std::vector<std::uint32_t>> labels;
  for (auto v : views) {
    if (!cfg.cluster_occlusion) v.depth.clear();
    if (v.mask_file.empty()) throw MissingArtifactError("mask_file of view " + std::to_string(v.view_id));
    const auto mask = io::read_mask(v.mask_file);
    log.input(v.mask_file);
    if (mask.width != v.width || mask.height != v.height) {
      throw ConfigError("mask size differs from camera " + std::to_string(v.view_id));
    }
    labels.push_back(primitive_mask_labels(cloud, v, mask, cfg.cluster_depth_tol));
  }
  const MaskAffinity affinity(partition, labels);
  const auto adj = knn_graph(cloud, cfg.k);
  const auto candidates = candidate_edges(partition, adj);
  const auto result = progressive_cluster(partition.segment_count(), candidates, affinity, cfg.cluster);
  io::write_instances(cfg.instances_path(), result);
  log.output(cfg.instances_path());
  fs::path side = cfg.instances_path();
  side += ".json";
  log.output(side);
  counts["instance_count"] = result.instances.instance_count;
  counts["candidate_pairs"] = candidates.size();
  OJson its = OJson::array();
  for (const auto& it : result.iterations) {
    its.push_back({{"threshold", it.threshold}, {"merges", it.merges}, {"instances_after", it.instances_after}});
  }
  counts["iterations"] = its;
}

void run_label(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.instances_path(), "cluster");
  require_fresh(cfg, cfg.partition_path(), "supersegment");
  require_fresh(cfg, cfg.queries, "simulate");
  const auto cloud = load_cloud(cfg, log);
  const auto queries = io::read_queries(cfg.queries);
  log.input(cfg.queries);
  const auto partition = io::read_partition(cfg.partition_path());
  log.input(cfg.partition_path());
  const auto instances = io::read_instances(cfg.instances_path());
  log.input(cfg.instances_path());
  const auto features = field_features_from(cfg, cloud, log);
  const auto cls = classify(features, queries);
  const auto votes = vote(partition, cls.class_of);
  const auto labeling = assemble(instances, votes.segment_class, partition, queries, cls.similarity);
  io::write_panoptic(cfg.panoptic_path(), labeling, queries);
  log.output(cfg.panoptic_path());
  fs::path side = cfg.panoptic_path();
  side += ".json";
  log.output(side);
  std::size_t things = 0;
  OJson per_class = OJson::object();
  for (const auto& inst : labeling.instances) {
    if (inst.stuff) continue;
    ++things;
    const auto& name = queries.entries[inst.class_index].name;
    per_class[name] = per_class.value(name, 0) + 1;
  }
  counts["thing_instances"] = things;
  counts["stuff_regions"] = labeling.instances.size() - things;
  counts["thing_instances_per_class"] = per_class;
}

void run_eval(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.panoptic_path(), "label");
  require_fresh(cfg, cfg.ground_truth, "simulate");
  require_fresh(cfg, cfg.queries, "simulate");
  const auto queries = io::read_queries(cfg.queries);
  log.input(cfg.queries);
  const auto gt = io::read_ground_truth(cfg.ground_truth, queries);
  log.input(cfg.ground_truth);
  const auto labeling = io::read_panoptic(cfg.panoptic_path());
  log.input(cfg.panoptic_path());
  const auto report = evaluate(labeling, gt);
  write_file_atomic(cfg.eval_json_path(), io::eval_report_json(report, gt));
  write_file_atomic(cfg.eval_text_path(), io::eval_report_text(report, gt));
  log.output(cfg.eval_json_path());
  log.output(cfg.eval_text_path());
  const auto opt = [](const std::optional<double>& v) { return v ? OJson(*v) : OJson(nullptr); };
  counts["miou"] = report.miou;
  counts["macc"] = report.macc;
  counts["prq_thing"] = opt(report.prq_thing);
  counts["prq_stuff"] = opt(report.prq_stuff);
}

}  // namespace

void MetricBounds::validate() const {
  for (const auto& b : {miou, macc, prq_thing, prq_stuff}) {
    if (b && !(*b >= 0.0 && *b <= 1.0)) throw ConfigError("metric bounds must lie in [0, 1]");
  }
}

namespace {

void check_bounds(const OJson& counts, const MetricBounds& b) {
  std::string failed;
  const auto check = [&](const char* name, const std::optional<double>& bound) {
    if (!bound) return;
    const auto& v = counts.at(name);
    if (v.is_null() || v.get<double>() < *bound) {
      failed += std::string(failed.empty() ? "" : ", ") + name + " " + (v.is_null() ? "n/a" : v.dump()) +
                " < " + std::to_string(*bound);
    }
  };
  check("miou", b.miou);
  check("macc", b.macc);
  check("prq_thing", b.prq_thing);
  check("prq_stuff", b.prq_stuff);
  if (!failed.empty()) throw Error("metric below bound: " + failed, ExitCode::MetricBelowBound);
}

void run_export(const PipelineConfig& cfg, DigestLog& log, OJson& counts) {
  require_fresh(cfg, cfg.panoptic_path(), "label");
  const auto mode = io::color_by_from_string(cfg.color_by);
  const auto cloud = load_cloud(cfg, log);
  const auto labeling = io::read_panoptic(cfg.panoptic_path());
  log.input(cfg.panoptic_path());
  std::vector<double> confidence;
  if (mode == io::ColorBy::Confidence) {
    require_fresh(cfg, cfg.fused_path(), "fuse");
    confidence = io::read_fused(cfg.fused_path()).confidence;
    log.input(cfg.fused_path());
  }
  io::write_ply(cfg.export_path(), io::colorize(cloud, labeling, confidence, mode));
  log.output(cfg.export_path());
  counts["color_by"] = cfg.color_by;
  counts["primitives"] = cloud.size();
}

}  // namespace

OJson run_stage(const std::string& stage, const PipelineConfig& cfg, const StageOptions& options) {
  const std::map<std::string, std::function<void(DigestLog&, OJson&)>> stages{
      {"simulate", [&](DigestLog& l, OJson& c) { run_simulate(cfg, l, c); }},
      {"fuse", [&](DigestLog& l, OJson& c) { run_fuse(cfg, l, c); }},
      {"distill", [&](DigestLog& l, OJson& c) { run_distill(cfg, l, c); }},
      {"supersegment", [&](DigestLog& l, OJson& c) { run_supersegment(cfg, l, c); }},
      {"cluster", [&](DigestLog& l, OJson& c) { run_cluster(cfg, l, c); }},
      {"label", [&](DigestLog& l, OJson& c) { run_label(cfg, l, c); }},
      {"eval", [&](DigestLog& l, OJson& c) { run_eval(cfg, l, c); }},
      {"export", [&](DigestLog& l, OJson& c) { run_export(cfg, l, c); }},
  };
  const auto it = stages.find(stage);
  if (it == stages.end()) throw ConfigError("unknown stage: " + stage);
  cfg.validate();
  options.bounds.validate();
  set_thread_count(cfg.threads);
  fs::create_directories(cfg.output_dir / "reports");

  spdlog::info("stage {} starting", stage);
  const auto start = std::chrono::steady_clock::now();
  DigestLog log(cfg);
  OJson counts = OJson::object();
  it->second(log, counts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  OJson report;
  report["stage"] = stage;
  report["parameters"] = cfg.parameters();
  report["inputs"] = log.inputs();
  report["outputs"] = log.outputs();
  report["counts"] = counts;
  // Wall time would make reports differ between otherwise identical runs.
  if (!cfg.deterministic) report["wall_time_s"] = seconds;
  write_file_atomic(cfg.report_path(stage), report.dump(2) + "\n");
  spdlog::info("stage {} finished in {:.2f} s", stage, seconds);
  if (stage == "eval") check_bounds(counts, options.bounds);
  return report;
}

}  // namespace psplat
