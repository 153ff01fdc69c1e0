#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psplat/panoptic.hpp"

namespace psplat {

/// Per-primitive ground truth; -1 marks unlabeled class or instance.
struct GroundTruth {
  std::vector<std::int32_t> class_of;
  std::vector<std::int32_t> instance_of;
  std::vector<ClassKind> kinds;
  std::vector<std::string> names;

  std::size_t size() const { return class_of.size(); }
  std::size_t class_count() const { return kinds.size(); }
  void validate() const;
};

struct ClassScores {
  std::optional<double> iou;
  std::optional<double> accuracy;
  std::optional<double> prq;
  std::uint32_t tp = 0, fp = 0, fn = 0;
  double matched_iou_sum = 0.0;
};

struct EvalReport {
  double miou = 0.0;
  double macc = 0.0;
  std::optional<double> prq_thing;
  std::optional<double> prq_stuff;
  std::vector<ClassScores> per_class;
};

struct SemanticScore {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;
};

/// Mean IoU over classes present in the labeled ground truth. Throws
/// Error when no primitive is labeled.
SemanticScore miou(std::span<const std::int32_t> pred_classes, const GroundTruth& gt);
SemanticScore macc(std::span<const std::int32_t> pred_classes, const GroundTruth& gt);

struct PrqScore {
  std::optional<double> thing;
  std::optional<double> stuff;
  std::vector<ClassScores> per_class;
};

/// Panoptic reconstruction quality with unique IoU > 0.5 matching per class.
PrqScore prq(const PanopticLabeling& pred, const GroundTruth& gt);

EvalReport evaluate(const PanopticLabeling& pred, const GroundTruth& gt);

}  // namespace psplat
