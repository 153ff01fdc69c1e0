#include "psplat/panoptic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace psplat {

std::size_t QuerySet::index_of(const std::string& name) const {
  for (std::size_t c = 0; c < entries.size(); ++c) {
    if (entries[c].name == name) return c;
  }
  throw LookupError("unknown query: " + name);
}

void QuerySet::validate() const {
  if (entries.empty()) throw ConfigError("query set is empty");
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw ConfigError("duplicate query name: " + e.name);
    if (e.embedding.size() != dim()) throw ConfigError("query embeddings differ in dimension");
    if (std::abs(norm(e.embedding) - 1.0) > 1e-4) throw ConfigError("query embedding not unit length: " + e.name);
  }
}

Classification classify(const FeatureMatrix& features, const QuerySet& queries) {
  if (queries.entries.empty()) throw ConfigError("classification needs at least one query");
  if (features.dim != queries.dim()) throw ConfigError("feature and query dimensions differ");
  Classification out;
  out.class_of.assign(features.rows, 0);
  out.similarity.assign(features.rows, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(features.rows); ++si) {
    const auto i = static_cast<std::size_t>(si);
    const auto f = features.row(i);
    const double fn = norm(f);
    std::uint32_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < queries.size(); ++c) {
      const auto& e = queries.entries[c].embedding;
      const double denom = fn * norm(e);
      const double sim = denom > 0.0 ? dot(f, e) / denom : 0.0;
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<std::uint32_t>(c);
      }
    }
    out.class_of[i] = best;
    out.similarity[i] = best_sim;
  }
  return out;
}

namespace {

template <typename Weights>
std::uint32_t weighted_mode(const Weights& weights) {
  std::uint32_t best = 0;
  double best_w = -1.0;
  for (const auto& [cls, w] : weights) {  // ascending class order
    if (w > best_w) {
      best_w = w;
      best = cls;
    }
  }
  return best;
}

}  // namespace

VoteResult vote(const SuperPrimitivePartition& partition, std::span<const std::uint32_t> classes) {
  if (classes.size() != partition.primitive_count()) throw ConfigError("class count does not match partition");
  std::vector<std::map<std::uint32_t, double>> tallies(partition.segment_count());
  for (std::size_t i = 0; i < classes.size(); ++i) tallies[partition.segment_of[i]][classes[i]] += 1.0;
  VoteResult out;
  out.segment_class.resize(partition.segment_count());
  for (std::size_t s = 0; s < tallies.size(); ++s) out.segment_class[s] = weighted_mode(tallies[s]);
  out.primitive_class.resize(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) out.primitive_class[i] = out.segment_class[partition.segment_of[i]];
  return out;
}

PanopticLabeling assemble(const InstancePartition& instances, std::span<const std::uint32_t> super_classes,
                          const SuperPrimitivePartition& partition, const QuerySet& queries,
                          std::span<const double> primitive_similarity) {
  const std::size_t segs = partition.segment_count();
  if (instances.instance_of.size() != segs || super_classes.size() != segs) {
    throw ConfigError("instance partition does not cover every super-primitive");
  }
  std::vector<std::map<std::uint32_t, double>> tallies(instances.instance_count);
  for (std::size_t s = 0; s < segs; ++s) {
    tallies[instances.instance_of[s]][super_classes[s]] += partition.segments[s].count;
  }
  std::vector<std::uint32_t> instance_class(instances.instance_count);
  for (std::size_t k = 0; k < tallies.size(); ++k) instance_class[k] = weighted_mode(tallies[k]);

  // Final region key: distinct per thing instance, one per stuff class.
  const auto region_key = [&](std::uint32_t inst) -> std::int64_t {
    const std::uint32_t cls = instance_class[inst];
    if (cls < queries.size() && queries.is_stuff(cls)) return -1 - static_cast<std::int64_t>(cls);
    return inst;
  };

  PanopticLabeling out;
  const std::size_t n = partition.primitive_count();
  out.instance_of.assign(n, kUnassigned);
  out.class_of.assign(n, kUnassigned);
  std::map<std::int64_t, std::int32_t> id_of_region;
  std::vector<double> score_sum;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t inst = instances.instance_of[partition.segment_of[i]];
    const std::int64_t key = region_key(inst);
    auto it = id_of_region.find(key);
    if (it == id_of_region.end()) {
      it = id_of_region.emplace(key, static_cast<std::int32_t>(out.instances.size())).first;
      InstanceSummary summary;
      summary.class_index = instance_class[inst];
      summary.stuff = key < 0;
      out.instances.push_back(summary);
      score_sum.push_back(0.0);
    }
    const auto id = static_cast<std::size_t>(it->second);
    out.instance_of[i] = it->second;
    out.class_of[i] = static_cast<std::int32_t>(out.instances[id].class_index);
    ++out.instances[id].primitive_count;
    if (!primitive_similarity.empty()) score_sum[id] += primitive_similarity[i];
  }
  for (std::size_t k = 0; k < out.instances.size(); ++k) {
    out.instances[k].score = score_sum[k] / std::max<std::uint32_t>(out.instances[k].primitive_count, 1);
  }
  return out;
}

std::vector<std::uint32_t> text_query(const PanopticLabeling& labeling, const QuerySet& queries,
                                      const std::string& query_name) {
  const std::size_t cls = queries.index_of(query_name);
  std::vector<std::uint32_t> hits;
  for (std::size_t k = 0; k < labeling.instances.size(); ++k) {
    const auto& inst = labeling.instances[k];
    if (!inst.stuff && inst.class_index == cls) hits.push_back(static_cast<std::uint32_t>(k));
  }
  std::stable_sort(hits.begin(), hits.end(), [&](std::uint32_t a, std::uint32_t b) {
    return labeling.instances[a].score > labeling.instances[b].score;
  });
  return hits;
}

}  // namespace psplat
