#include "psplat/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace psplat {

void FeatureMap::normalize() {
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::span<float> v(data.data() + p * dim, static_cast<std::size_t>(dim));
    const double n = norm(std::span<const float>(v));
    // Pixels already unit to float precision keep their exact bits.
    if (n > 0.0 && std::abs(n - 1.0) > 1e-6) {
      for (float& x : v) x = static_cast<float>(x / n);
    }
  }
}

void FusionConfig::validate() const {
  if (!(depth_tol > 0.0)) throw ConfigError("fusion.depth_tol must be positive");
  if (!(eps > 0.0)) throw ConfigError("fusion.eps must be positive");
  if (!(gamma_max > 0.0)) throw ConfigError("fusion.gamma_max must be positive");
}

std::size_t FusedFeatureCloud::valid_count() const {
  return static_cast<std::size_t>(std::count_if(obs_count.begin(), obs_count.end(),
                                                 [](std::uint32_t c) { return c >= 1; }));
}

std::optional<std::vector<float>> sample_bilinear(const FeatureMap& fmap, const Vec2& pixel) {
  const double x0 = std::floor(pixel.x());
  const double y0 = std::floor(pixel.y());
  const double tx = pixel.x() - x0;
  const double ty = pixel.y() - y0;
  const double weights[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  const int dx[4] = {0, 1, 0, 1};
  const int dy[4] = {0, 0, 1, 1};

  std::vector<double> acc(static_cast<std::size_t>(fmap.dim), 0.0);
  bool any = false;
  for (int c = 0; c < 4; ++c) {
    if (weights[c] == 0.0) continue;
    const double col = x0 + dx[c];
    const double row = y0 + dy[c];
    if (col < 0 || row < 0 || col >= fmap.width || row >= fmap.height) continue;
    const auto f = fmap.at(static_cast<int>(row), static_cast<int>(col));
    if (norm(f) == 0.0) continue;
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += weights[c] * f[d];
    any = true;
  }
  if (!any) return std::nullopt;
  const double n = norm(std::span<const double>(acc));
  if (n == 0.0) return std::nullopt;
  std::vector<float> out(acc.size());
  for (std::size_t d = 0; d < acc.size(); ++d) out[d] = static_cast<float>(acc[d] / n);
  return out;
}

namespace {

void check_map(const CameraView& view, const FeatureMap& fmap) {
  if (fmap.width != view.width || fmap.height != view.height) {
    throw ConfigError("feature map " + std::to_string(fmap.width) + "x" + std::to_string(fmap.height) +
                      " does not match view " + std::to_string(view.view_id) + " resolution " +
                      std::to_string(view.width) + "x" + std::to_string(view.height));
  }
}

}  // namespace

ObservationSet gather_observations(const PrimitiveCloud& cloud, const CameraView& view,
                                   const FeatureMap& fmap, double depth_tol) {
  check_map(view, fmap);
  ObservationSet obs;
  obs.present.assign(cloud.size(), 0);
  obs.samples = FeatureMatrix(cloud.size(), static_cast<std::size_t>(fmap.dim));
  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < n; ++si) {
    const auto i = static_cast<std::size_t>(si);
    Projection proj;
    if (!is_visible(cloud.positions[i], view, depth_tol, &proj)) continue;
    auto f = sample_bilinear(fmap, proj.pixel);
    if (!f) continue;
    std::copy(f->begin(), f->end(), obs.samples.row(i).begin());
    obs.present[i] = 1;
  }
  return obs;
}

std::optional<PoolResult> pool(std::span<const std::span<const float>> samples) {
  if (samples.empty()) return std::nullopt;
  const std::size_t dim = samples.front().size();
  PoolResult out;
  out.feature.assign(dim, 0.0);
  for (const auto& s : samples) {
    for (std::size_t d = 0; d < dim; ++d) out.feature[d] += s[d];
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (double& x : out.feature) x *= inv;
  const double n = norm(std::span<const double>(out.feature));
  if (n <= 1e-12) {
    out.degenerate = true;
    const double n0 = norm(samples.front());
    for (std::size_t d = 0; d < dim; ++d) out.feature[d] = samples.front()[d] / n0;
    return out;
  }
  for (double& x : out.feature) x /= n;
  return out;
}

std::vector<double> sample_variance(std::span<const std::span<const float>> samples) {
  if (samples.empty()) return {};
  const std::size_t dim = samples.front().size();
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  if (samples.size() == 1) return var;
  for (const auto& s : samples) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += s[d];
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (double& m : mean) m *= inv;
  for (const auto& s : samples) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double e = s[d] - mean[d];
      var[d] += e * e;
    }
  }
  for (double& v : var) v *= inv;
  return var;
}

double confidence(std::uint32_t obs_count, std::uint32_t total_views,
                  std::span<const double> per_dim_variance, double eps, double gamma_max) {
  if (obs_count == 0 || total_views == 0) return 0.0;
  const double total_var = std::accumulate(per_dim_variance.begin(), per_dim_variance.end(), 0.0);
  const double observed = static_cast<double>(obs_count) / static_cast<double>(total_views);
  return std::min(observed / (total_var + eps), gamma_max);
}

FusedPrimitive reduce_samples(std::span<const std::span<const float>> samples, std::size_t dim,
                              std::uint32_t total_views, const FusionConfig& cfg) {
  FusedPrimitive out;
  out.feature.assign(dim, 0.0f);
  const auto pooled = pool(samples);
  if (!pooled) return out;
  for (std::size_t d = 0; d < dim; ++d) out.feature[d] = static_cast<float>(pooled->feature[d]);
  out.obs_count = static_cast<std::uint32_t>(samples.size());
  const auto var = sample_variance(samples);
  out.confidence = confidence(out.obs_count, total_views, var, cfg.eps, cfg.gamma_max);
  return out;
}

FusedFeatureCloud fuse(const PrimitiveCloud& cloud, std::span<const CameraView> views,
                       std::span<const FeatureMap> feature_maps, const FusionConfig& cfg) {
  cfg.validate();
  if (views.size() != feature_maps.size()) {
    throw ConfigError("every view needs exactly one feature map");
  }
  if (views.empty()) throw ConfigError("fusion needs at least one view");
  const std::size_t dim = static_cast<std::size_t>(feature_maps.front().dim);
  for (std::size_t v = 0; v < views.size(); ++v) {
    check_map(views[v], feature_maps[v]);
    if (static_cast<std::size_t>(feature_maps[v].dim) != dim) {
      throw ConfigError("feature maps disagree on feature dimension");
    }
  }
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return views[a].view_id < views[b].view_id; });

  const auto total_views = static_cast<std::uint32_t>(views.size());
  FusedFeatureCloud out;
  out.dim = dim;
  out.view_count = total_views;
  out.features = FeatureMatrix(cloud.size(), dim);
  out.confidence.assign(cloud.size(), 0.0);
  out.obs_count.assign(cloud.size(), 0);

  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel
  {
    FeatureMatrix buffer(views.size(), dim);
    std::vector<std::span<const float>> samples;
#pragma omp for schedule(dynamic, 64)
    for (std::ptrdiff_t si = 0; si < n; ++si) {
      const auto i = static_cast<std::size_t>(si);
      samples.clear();
      for (std::size_t v : order) {
        Projection proj;
        if (!is_visible(cloud.positions[i], views[v], cfg.depth_tol, &proj)) continue;
        auto f = sample_bilinear(feature_maps[v], proj.pixel);
        if (!f) continue;
        auto row = buffer.row(samples.size());
        std::copy(f->begin(), f->end(), row.begin());
        samples.push_back(row);
      }
      auto fused = reduce_samples(samples, dim, total_views, cfg);
      std::copy(fused.feature.begin(), fused.feature.end(), out.features.row(i).begin());
      out.confidence[i] = fused.confidence;
      out.obs_count[i] = fused.obs_count;
    }
  }
  if (out.valid_count() == 0) throw PipelineError("no overlap between cameras and cloud");
  return out;
}

}  // namespace psplat
