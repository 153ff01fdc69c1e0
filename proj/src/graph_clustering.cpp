#include "psplat/graph_clustering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace psplat {

std::vector<std::uint32_t> primitive_mask_labels(const PrimitiveCloud& cloud, const CameraView& view,
                                                 const MaskMap& mask, double depth_tol) {
  if (mask.width != view.width || mask.height != view.height) {
    throw ConfigError("mask raster does not match view " + std::to_string(view.view_id) + " resolution");
  }
  std::vector<std::uint32_t> labels(cloud.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(cloud.size()); ++si) {
    const auto i = static_cast<std::size_t>(si);
    PixelIndex px;
    if (is_visible(cloud.positions[i], view, depth_tol, nullptr, &px)) labels[i] = mask.at(px.row, px.col);
  }
  return labels;
}

namespace {

MaskLabelDistribution normalize_counts(const std::map<std::uint32_t, std::uint32_t>& counts) {
  MaskLabelDistribution d;
  for (const auto& [label, c] : counts) d.visible_count += c;
  if (d.visible_count == 0) return d;
  for (const auto& [label, c] : counts) {
    d.probabilities.emplace_back(label, static_cast<double>(c) / d.visible_count);
  }
  return d;
}

}  // namespace

MaskLabelDistribution mask_distribution(std::span<const std::uint32_t> members,
                                        std::span<const std::uint32_t> labels_in_view) {
  std::map<std::uint32_t, std::uint32_t> counts;
  for (std::uint32_t m : members) {
    const std::uint32_t label = labels_in_view[m];
    if (label != 0) ++counts[label];
  }
  return normalize_counts(counts);
}

MaskLabelDistribution mask_distribution(std::span<const std::uint32_t> members, const CameraView& view,
                                        const MaskMap& mask, const PrimitiveCloud& cloud, double depth_tol) {
  if (mask.width != view.width || mask.height != view.height) {
    throw ConfigError("mask raster does not match view resolution");
  }
  std::map<std::uint32_t, std::uint32_t> counts;
  for (std::uint32_t m : members) {
    PixelIndex px;
    if (!is_visible(cloud.positions[m], view, depth_tol, nullptr, &px)) continue;
    const std::uint32_t label = mask.at(px.row, px.col);
    if (label != 0) ++counts[label];
  }
  return normalize_counts(counts);
}

std::optional<double> jsd(const MaskLabelDistribution& p, const MaskLabelDistribution& q) {
  if (p.empty() || q.empty()) return std::nullopt;
  const auto term = [](double a, double mid) { return a > 0.0 ? a * std::log2(a / mid) : 0.0; };
  double sum = 0.0;
  std::size_t i = 0, j = 0;
  const auto& a = p.probabilities;
  const auto& b = q.probabilities;
  while (i < a.size() || j < b.size()) {
    double pa = 0.0, qb = 0.0;
    if (j >= b.size() || (i < a.size() && a[i].first < b[j].first)) {
      pa = a[i++].second;
    } else if (i >= a.size() || b[j].first < a[i].first) {
      qb = b[j++].second;
    } else {
      pa = a[i++].second;
      qb = b[j++].second;
    }
    const double mid = 0.5 * (pa + qb);
    sum += term(pa, mid) + term(qb, mid);
  }
  return std::clamp(0.5 * sum, 0.0, 1.0);
}

std::optional<double> pair_affinity(std::span<const MaskLabelDistribution> per_view_i, std::size_t size_i,
                                    std::span<const MaskLabelDistribution> per_view_j, std::size_t size_j) {
  if (per_view_i.size() != per_view_j.size()) throw ConfigError("per-view distribution counts differ");
  if (size_i == 0 || size_j == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t k = 0;
  for (std::size_t v = 0; v < per_view_i.size(); ++v) {
    const auto& di = per_view_i[v];
    const auto& dj = per_view_j[v];
    if (di.visible_count == 0 || dj.visible_count == 0) continue;
    const auto divergence = jsd(di, dj);
    if (!divergence) continue;
    const double vis_i = static_cast<double>(di.visible_count) / static_cast<double>(size_i);
    const double vis_j = static_cast<double>(dj.visible_count) / static_cast<double>(size_j);
    sum += vis_i * vis_j * (1.0 - *divergence);
    ++k;
  }
  if (k == 0) return std::nullopt;
  return sum / static_cast<double>(k);
}

std::vector<VertexPair> candidate_edges(const SuperPrimitivePartition& partition, const AdjacencyGraph& adj) {
  std::vector<VertexPair> pairs;
  for (const auto& [i, j] : adj.edges()) {
    std::uint32_t a = partition.segment_of[i];
    std::uint32_t b = partition.segment_of[j];
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    pairs.emplace_back(a, b);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

MaskAffinity::MaskAffinity(const SuperPrimitivePartition& partition,
                           std::span<const std::vector<std::uint32_t>> labels_per_view) {
  const std::size_t segs = partition.segment_count();
  sizes_.resize(segs);
  for (std::size_t s = 0; s < segs; ++s) sizes_[s] = partition.segments[s].count;
  histograms_.resize(labels_per_view.size());
  for (std::size_t v = 0; v < labels_per_view.size(); ++v) {
    const auto& labels = labels_per_view[v];
    if (labels.size() != partition.primitive_count()) throw ConfigError("label table size mismatch");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> keyed;  // (segment, label)
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != 0) keyed.emplace_back(partition.segment_of[i], labels[i]);
    }
    std::sort(keyed.begin(), keyed.end());
    auto& per_seg = histograms_[v];
    per_seg.assign(segs, {});
    for (std::size_t k = 0; k < keyed.size();) {
      std::size_t e = k;
      while (e < keyed.size() && keyed[e] == keyed[k]) ++e;
      per_seg[keyed[k].first].emplace_back(keyed[k].second, static_cast<std::uint32_t>(e - k));
      k = e;
    }
  }
}

MaskLabelDistribution MaskAffinity::distribution(std::span<const std::uint32_t> cluster, std::size_t view) const {
  std::map<std::uint32_t, std::uint32_t> counts;
  for (std::uint32_t s : cluster) {
    for (const auto& [label, c] : histograms_[view][s]) counts[label] += c;
  }
  return normalize_counts(counts);
}

std::optional<double> MaskAffinity::affinity(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) const {
  std::size_t size_a = 0, size_b = 0;
  for (std::uint32_t s : a) size_a += sizes_[s];
  for (std::uint32_t s : b) size_b += sizes_[s];
  std::vector<MaskLabelDistribution> da(view_count()), db(view_count());
  for (std::size_t v = 0; v < view_count(); ++v) {
    da[v] = distribution(a, v);
    db[v] = distribution(b, v);
  }
  return pair_affinity(da, size_a, db, size_b);
}

ClusterSchedule ClusterSchedule::linear(double start, double end, int iterations) {
  if (iterations < 1) throw ConfigError("cluster schedule needs at least one iteration");
  ClusterSchedule s;
  s.thresholds.clear();
  for (int t = 0; t < iterations; ++t) {
    const double a = iterations == 1 ? 0.0 : static_cast<double>(t) / (iterations - 1);
    const double raw = start + (end - start) * a;
    s.thresholds.push_back(std::round(raw * 1e12) / 1e12);
  }
  return s;
}

void ClusterSchedule::validate() const {
  if (thresholds.empty()) throw ConfigError("cluster schedule is empty");
  for (std::size_t t = 1; t < thresholds.size(); ++t) {
    if (!(thresholds[t] < thresholds[t - 1])) throw ConfigError("cluster thresholds must strictly decrease");
  }
}

std::vector<std::optional<double>> evaluate_affinities(std::span<const VertexPair> pairs,
                                                       std::span<const std::vector<std::uint32_t>> clusters,
                                                       const AffinitySource& source) {
  std::vector<std::optional<double>> out(pairs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t sp = 0; sp < static_cast<std::ptrdiff_t>(pairs.size()); ++sp) {
    const auto p = static_cast<std::size_t>(sp);
    out[p] = source.affinity(clusters[pairs[p].first], clusters[pairs[p].second]);
  }
  return out;
}

namespace {

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

/// Cluster member lists ordered by smallest member; fills cluster_of.
std::vector<std::vector<std::uint32_t>> current_clusters(std::vector<std::uint32_t>& parent,
                                                         std::vector<std::uint32_t>& cluster_of) {
  const std::size_t n = parent.size();
  std::vector<std::uint32_t> id_of_root(n, UINT32_MAX);
  std::vector<std::vector<std::uint32_t>> clusters;
  cluster_of.assign(n, 0);
  for (std::uint32_t v = 0; v < n; ++v) {
    const std::uint32_t r = find_root(parent, v);
    if (id_of_root[r] == UINT32_MAX) {
      id_of_root[r] = static_cast<std::uint32_t>(clusters.size());
      clusters.emplace_back();
    }
    cluster_of[v] = id_of_root[r];
    clusters[id_of_root[r]].push_back(v);
  }
  return clusters;
}

}  // namespace

ClusterResult progressive_cluster(std::size_t vertex_count, std::span<const VertexPair> candidates,
                                  const AffinitySource& source, const ClusterSchedule& schedule) {
  schedule.validate();
  std::vector<std::uint32_t> parent(vertex_count);
  std::iota(parent.begin(), parent.end(), 0u);
  std::vector<std::uint32_t> cluster_of;
  ClusterResult result;

  for (double threshold : schedule.thresholds) {
    const auto clusters = current_clusters(parent, cluster_of);
    std::vector<VertexPair> pairs;
    for (const auto& [a, b] : candidates) {
      if (a >= vertex_count || b >= vertex_count) throw ConfigError("candidate pair out of range");
      std::uint32_t ca = cluster_of[a];
      std::uint32_t cb = cluster_of[b];
      if (ca == cb) continue;
      if (ca > cb) std::swap(ca, cb);
      pairs.emplace_back(ca, cb);
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    const auto affinity = evaluate_affinities(pairs, clusters, source);
    std::vector<std::size_t> order;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      if (affinity[p] && *affinity[p] > threshold) order.push_back(p);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (*affinity[x] != *affinity[y]) return *affinity[x] > *affinity[y];
      return pairs[x] < pairs[y];
    });

    ClusterIteration stats;
    stats.threshold = threshold;
    stats.candidate_pairs = static_cast<std::uint32_t>(pairs.size());
    for (std::size_t p : order) {
      std::uint32_t ra = find_root(parent, clusters[pairs[p].first].front());
      std::uint32_t rb = find_root(parent, clusters[pairs[p].second].front());
      if (ra == rb) continue;
      if (rb < ra) std::swap(ra, rb);
      parent[rb] = ra;
      ++stats.merges;
    }
    stats.instances_after = static_cast<std::uint32_t>(current_clusters(parent, cluster_of).size());
    result.iterations.push_back(stats);
  }

  const auto clusters = current_clusters(parent, cluster_of);
  result.instances.instance_of = cluster_of;
  result.instances.instance_count = static_cast<std::uint32_t>(clusters.size());
  return result;
}

}  // namespace psplat
