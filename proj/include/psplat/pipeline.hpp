#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "psplat/feature_field.hpp"
#include "psplat/fusion.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/scene_sim.hpp"
#include "psplat/supersegment.hpp"

namespace psplat {

namespace fs = std::filesystem;

/// Cut schedule parameters as written in config files.
struct CutParams {
  int iterations = 4;
  double angle_start_deg = 15.0;
  double angle_end_deg = 40.0;
  double f_start = 0.95;
  double f_end = 0.80;
  std::uint32_t min_size = 20;
  bool use_language = true;

  CutSchedule schedule() const {
    return CutSchedule::linear(iterations, angle_start_deg, angle_end_deg, f_start, f_end, min_size);
  }
};

/// All paths are absolute after loading; relative entries in the JSON
/// resolve against the config file's directory.
struct PipelineConfig {
  fs::path base_dir;
  fs::path scene_dir;
  fs::path cloud;
  fs::path cameras;
  fs::path queries;
  fs::path ground_truth;
  fs::path output_dir;

  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 0;

  SimConfig simulate;
  FusionConfig fusion;
  /// Neighbors for the primitive graph and for normal estimation.
  int k = 16;
  FieldConfig field;
  DistillConfig distill;
  CutParams cut;
  ClusterSchedule cluster;
  double cluster_depth_tol = 0.05;
  /// Depth test when projecting primitives into masks. Off means
  /// frustum-only, which suits synthetic scenes.
  bool cluster_occlusion = false;
  std::string color_by = "instance";

  /// Unknown keys are rejected so typos fail loudly.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static PipelineConfig load(const fs::path& path);
  /// Overrides distillation settings from a JSON object with the same keys
  /// as the "distill" section.
  void load_distill_config(const fs::path& path);
  nlohmann::ordered_json parameters() const;
  void validate() const;

  fs::path fused_path() const { return output_dir / "fused.fuse"; }
  fs::path field_path() const { return output_dir / "field.trip"; }
  fs::path partition_path() const { return output_dir / "partition.supr"; }
  fs::path instances_path() const { return output_dir / "instances.inst"; }
  fs::path panoptic_path() const { return output_dir / "panoptic.pano"; }
  fs::path eval_json_path() const { return output_dir / "eval.json"; }
  fs::path eval_text_path() const { return output_dir / "eval.txt"; }
  fs::path export_path() const { return output_dir / "export.ply"; }
  fs::path report_path(const std::string& stage) const { return output_dir / "reports" / (stage + ".json"); }
};

/// Applies a "distill" section (optionally with "seed") onto `cfg`.
void apply_distill(const nlohmann::json& section, DistillConfig& cfg);

/// Lower bounds checked by the eval stage.
struct MetricBounds {
  std::optional<double> miou, macc, prq_thing, prq_stuff;

  void validate() const;
};

struct StageOptions {
  MetricBounds bounds;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"simulate", "fuse", "distill", "supersegment",
                                              "cluster",  "label", "eval",   "export"};
  return names;
}

/// Runs one stage, writes its artifacts atomically and a report JSON to
/// `report_path(stage)`, and returns the report. Throws Error subclasses
/// whose code() is the CLI exit code.
nlohmann::ordered_json run_stage(const std::string& stage, const PipelineConfig& cfg,
                                 const StageOptions& options = {});

/// Writes a simulated scene (cloud, cameras, depth/feature/mask per view,
/// queries, ground truth, manifest) under `dir` and returns the manifest.
nlohmann::ordered_json write_scene(const Scene& scene, const fs::path& dir);

}  // namespace psplat
