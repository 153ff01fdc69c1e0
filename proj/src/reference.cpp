#include "psplat/reference.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace psplat::reference {

std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const Vec3> points, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (points.size() <= static_cast<std::size_t>(k)) throw ConfigError("k must be smaller than the point count");
  std::vector<std::vector<std::uint32_t>> out(points.size());
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (std::size_t i = 0; i < points.size(); ++i) {
    cand.clear();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) cand.emplace_back((points[i] - points[j]).squaredNorm(), static_cast<std::uint32_t>(j));
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int n = 0; n < k; ++n) out[i].push_back(cand[static_cast<std::size_t>(n)].second);
  }
  return out;
}

std::vector<std::uint8_t> visibility(const PrimitiveCloud& cloud, const CameraView& cam, double depth_tol) {
  std::vector<std::uint8_t> out(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) out[i] = is_visible(cloud.positions[i], cam, depth_tol) ? 1 : 0;
  return out;
}

FusedFeatureCloud fuse(const PrimitiveCloud& cloud, std::span<const CameraView> views,
                       std::span<const FeatureMap> feature_maps, const FusionConfig& cfg) {
  cfg.validate();
  if (views.empty() || views.size() != feature_maps.size()) throw ConfigError("every view needs one feature map");
  const auto dim = static_cast<std::size_t>(feature_maps.front().dim);
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return views[a].view_id < views[b].view_id; });
  std::vector<ObservationSet> obs;
  for (std::size_t v : order) obs.push_back(gather_observations(cloud, views[v], feature_maps[v], cfg.depth_tol));

  FusedFeatureCloud out;
  out.dim = dim;
  out.view_count = static_cast<std::uint32_t>(views.size());
  out.features = FeatureMatrix(cloud.size(), dim);
  out.confidence.assign(cloud.size(), 0.0);
  out.obs_count.assign(cloud.size(), 0);
  std::vector<std::span<const float>> samples;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    samples.clear();
    for (const auto& o : obs) {
      if (o.present[i]) samples.push_back(o.samples.row(i));
    }
    const auto fused = reduce_samples(samples, dim, out.view_count, cfg);
    std::copy(fused.feature.begin(), fused.feature.end(), out.features.row(i).begin());
    out.confidence[i] = fused.confidence;
    out.obs_count[i] = fused.obs_count;
  }
  if (out.valid_count() == 0) throw PipelineError("no overlap between cameras and cloud");
  return out;
}

FeatureMatrix field_features(const LanguageField& field, const PrimitiveCloud& cloud) {
  const auto dim = static_cast<std::size_t>(field.decoder.output_dim());
  FeatureMatrix out(cloud.size(), dim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto f = field.feature_at(cloud.positions[i]);
    for (std::size_t d = 0; d < dim; ++d) out.row(i)[d] = static_cast<float>(f[d]);
  }
  return out;
}

std::vector<std::uint32_t> primitive_mask_labels(const PrimitiveCloud& cloud, const CameraView& view,
                                                 const MaskMap& mask, double depth_tol) {
  std::vector<std::uint32_t> labels(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    PixelIndex px;
    if (is_visible(cloud.positions[i], view, depth_tol, nullptr, &px)) labels[i] = mask.at(px.row, px.col);
  }
  return labels;
}

Classification classify(const FeatureMatrix& features, const QuerySet& queries) {
  Classification out;
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto f = features.row(i);
    std::uint32_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < queries.size(); ++c) {
      const auto& e = queries.entries[c].embedding;
      const double denom = norm(f) * norm(e);
      const double sim = denom > 0.0 ? dot(f, e) / denom : 0.0;
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<std::uint32_t>(c);
      }
    }
    out.class_of.push_back(best);
    out.similarity.push_back(best_sim);
  }
  return out;
}

std::vector<std::optional<double>> evaluate_affinities(std::span<const VertexPair> pairs,
                                                       std::span<const std::vector<std::uint32_t>> clusters,
                                                       const AffinitySource& source) {
  std::vector<std::optional<double>> out;
  for (const auto& [a, b] : pairs) out.push_back(source.affinity(clusters[a], clusters[b]));
  return out;
}

}  // namespace psplat::reference
