#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psplat/common.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/supersegment.hpp"

namespace psplat {

enum class ClassKind { Thing, Stuff };

struct QueryEntry {
  std::string name;
  std::vector<float> embedding;
  ClassKind kind = ClassKind::Thing;
};

/// Text-query embeddings; names unique, embeddings unit length.
struct QuerySet {
  std::vector<QueryEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
  /// Throws LookupError for unknown names.
  std::size_t index_of(const std::string& name) const;
  bool is_stuff(std::size_t cls) const { return entries[cls].kind == ClassKind::Stuff; }
  void validate() const;
};

struct Classification {
  std::vector<std::uint32_t> class_of;
  std::vector<double> similarity;
};

/// Cosine argmax per primitive; ties go to the lower class index.
Classification classify(const FeatureMatrix& features, const QuerySet& queries);

struct VoteResult {
  std::vector<std::uint32_t> segment_class;
  /// Member primitives relabeled to their segment's winner.
  std::vector<std::uint32_t> primitive_class;
};

/// Modal class per super-primitive; ties go to the lower class index.
VoteResult vote(const SuperPrimitivePartition& partition, std::span<const std::uint32_t> classes);

struct InstanceSummary {
  std::uint32_t class_index = 0;
  std::uint32_t primitive_count = 0;
  bool stuff = false;
  /// Mean classification similarity of the member primitives.
  double score = 0.0;
};

inline constexpr std::int32_t kUnassigned = -1;

struct PanopticLabeling {
  std::vector<std::int32_t> instance_of;
  std::vector<std::int32_t> class_of;
  std::vector<InstanceSummary> instances;

  std::size_t size() const { return instance_of.size(); }
};

/// Instance class is the primitive-count-weighted mode over member
/// super-primitives. Stuff instances collapse to one region per class.
/// Output instance ids are consecutive, ordered by first primitive.
PanopticLabeling assemble(const InstancePartition& instances, std::span<const std::uint32_t> super_classes,
                          const SuperPrimitivePartition& partition, const QuerySet& queries,
                          std::span<const double> primitive_similarity = {});

/// Thing instances whose class is the named query, by descending score.
std::vector<std::uint32_t> text_query(const PanopticLabeling& labeling, const QuerySet& queries,
                                      const std::string& query_name);

}  // namespace psplat
