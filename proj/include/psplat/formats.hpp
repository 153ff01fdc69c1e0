#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "psplat/feature_field.hpp"
#include "psplat/fusion.hpp"
#include "psplat/geometry.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/metrics.hpp"
#include "psplat/panoptic.hpp"
#include "psplat/supersegment.hpp"

// Every binary format is little-endian and starts with a 4-byte magic
// followed by a uint32 version (currently 1).

namespace psplat::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> encode_ply(const PrimitiveCloud& cloud);
PrimitiveCloud decode_ply(std::span<const std::uint8_t> bytes);
void write_ply(const fs::path& path, const PrimitiveCloud& cloud);
PrimitiveCloud read_ply(const fs::path& path);

/// Single-channel 16-bit grayscale image.
struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

std::vector<std::uint8_t> encode_png16(const Image16& image);
Image16 decode_png16(std::span<const std::uint8_t> bytes);
void write_png16(const fs::path& path, const Image16& image);
Image16 read_png16(const fs::path& path);

/// Depth in meters <-> millimeter PNG. Values round to the nearest mm.
Image16 depth_to_image(const CameraView& view);
void write_depth(const fs::path& path, const CameraView& view);
std::vector<float> read_depth(const fs::path& path, int width, int height);

void write_mask(const fs::path& path, const MaskMap& mask);
MaskMap read_mask(const fs::path& path);

/// Camera list JSON. Relative file names resolve against the JSON's
/// directory; depth maps are loaded when `load_depth` is set.
void write_cameras(const fs::path& path, std::span<const CameraView> views);
std::vector<CameraView> read_cameras(const fs::path& path, bool load_depth = true);

std::vector<std::uint8_t> encode_fmap(const FeatureMap& fmap);
FeatureMap decode_fmap(std::span<const std::uint8_t> bytes);
void write_fmap(const fs::path& path, const FeatureMap& fmap);
FeatureMap read_fmap(const fs::path& path);

std::vector<std::uint8_t> encode_fused(const FusedFeatureCloud& fused);
FusedFeatureCloud decode_fused(std::span<const std::uint8_t> bytes);
void write_fused(const fs::path& path, const FusedFeatureCloud& fused);
FusedFeatureCloud read_fused(const fs::path& path);

std::vector<std::uint8_t> encode_field(const LanguageField& field);
LanguageField decode_field(std::span<const std::uint8_t> bytes);
void write_field(const fs::path& path, const LanguageField& field);
LanguageField read_field(const fs::path& path);

std::vector<std::uint8_t> encode_partition(const SuperPrimitivePartition& partition);
SuperPrimitivePartition decode_partition(std::span<const std::uint8_t> bytes);
void write_partition(const fs::path& path, const SuperPrimitivePartition& partition);
SuperPrimitivePartition read_partition(const fs::path& path);

std::vector<std::uint8_t> encode_instances(const InstancePartition& instances);
InstancePartition decode_instances(std::span<const std::uint8_t> bytes);
void write_instances(const fs::path& path, const ClusterResult& result);
InstancePartition read_instances(const fs::path& path);

/// Binary ids and classes plus a sidecar JSON with per-instance summaries.
std::vector<std::uint8_t> encode_panoptic(const PanopticLabeling& labeling);
PanopticLabeling decode_panoptic(std::span<const std::uint8_t> bytes);
void write_panoptic(const fs::path& path, const PanopticLabeling& labeling, const QuerySet& queries);
PanopticLabeling read_panoptic(const fs::path& path);

/// "GTLB": N, then per primitive int32 class and int32 instance.
std::vector<std::uint8_t> encode_ground_truth(const GroundTruth& gt);
void write_ground_truth(const fs::path& path, const GroundTruth& gt);
/// Class kinds and names come from the query set.
GroundTruth read_ground_truth(const fs::path& path, const QuerySet& queries);

std::string encode_queries(const QuerySet& queries);
void write_queries(const fs::path& path, const QuerySet& queries);
QuerySet read_queries(const fs::path& path);

std::string eval_report_json(const EvalReport& report, const GroundTruth& gt);
std::string eval_report_text(const EvalReport& report, const GroundTruth& gt);

enum class ColorBy { Instance, Class, Confidence };
ColorBy color_by_from_string(const std::string& name);
/// Cloud colored by instance id hash, class id hash, or a confidence ramp
/// (`confidence` may be empty for the first two modes).
PrimitiveCloud colorize(const PrimitiveCloud& cloud, const PanopticLabeling& labeling,
                        std::span<const double> confidence, ColorBy mode);
Rgb hash_color(std::uint32_t id);

struct ValidationReport {
  std::string format;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Structural and invariant checks for any binary artifact or PLY. Throws
/// MissingArtifactError when the file cannot be read.
ValidationReport validate_file(const fs::path& path);
ValidationReport validate_bytes(std::span<const std::uint8_t> bytes);

}  // namespace psplat::io
