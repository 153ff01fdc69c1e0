#include "psplat/supersegment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace psplat {

CutSchedule CutSchedule::linear(int iterations, double angle_start_deg, double angle_end_deg, double f_start,
                                double f_end, std::uint32_t min_size) {
  if (iterations < 1) throw ConfigError("cut schedule needs at least one iteration");
  CutSchedule s;
  s.min_size = min_size;
  for (int t = 0; t < iterations; ++t) {
    const double a = iterations == 1 ? 0.0 : static_cast<double>(t) / (iterations - 1);
    const double angle = angle_start_deg + (angle_end_deg - angle_start_deg) * a;
    s.lambda_n.push_back(std::cos(angle * std::numbers::pi / 180.0));
    s.lambda_f.push_back(f_start + (f_end - f_start) * a);
  }
  return s;
}

void CutSchedule::validate() const {
  if (lambda_n.empty() || lambda_n.size() != lambda_f.size()) {
    throw ConfigError("cut schedule needs equally many normal and feature thresholds");
  }
  for (std::size_t t = 0; t < lambda_n.size(); ++t) {
    for (double l : {lambda_n[t], lambda_f[t]}) {
      if (!(l > -1.0 && l <= 1.0)) throw ConfigError("cut thresholds must lie in (-1, 1]");
    }
    if (t > 0 && (lambda_n[t] > lambda_n[t - 1] || lambda_f[t] > lambda_f[t - 1])) {
      throw ConfigError("cut thresholds must be non-increasing");
    }
  }
}

bool merge_predicate(const Vec3& n_i, const Vec3& n_j, std::span<const float> f_i, std::span<const float> f_j,
                     double lambda_n, double lambda_f) {
  return n_i.dot(n_j) > lambda_n && dot(f_i, f_j) > lambda_f;
}

std::vector<std::vector<std::uint32_t>> SuperPrimitivePartition::members() const {
  std::vector<std::vector<std::uint32_t>> out(segments.size());
  for (std::size_t i = 0; i < segment_of.size(); ++i) out[segment_of[i]].push_back(static_cast<std::uint32_t>(i));
  return out;
}

namespace {

/// Union-find carrying weighted normal/feature sums and a circular member list.
class SegmentForest {
 public:
  SegmentForest(const PrimitiveCloud& cloud, const FeatureMatrix& features, std::span<const double> weights)
      : dim_(features.dim),
        parent_(cloud.size()),
        next_(cloud.size()),
        count_(cloud.size(), 1),
        mass_(cloud.size()),
        normal_sum_(cloud.size()),
        feature_sum_(cloud.size() * features.dim),
        normal_(cloud.normals),
        feature_(features) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      parent_[i] = static_cast<std::uint32_t>(i);
      next_[i] = static_cast<std::uint32_t>(i);
      mass_[i] = weights[i];
      normal_sum_[i] = weights[i] * cloud.normals[i];
      for (std::size_t d = 0; d < dim_; ++d) feature_sum_[i * dim_ + d] = weights[i] * features.data[i * dim_ + d];
    }
  }

  std::uint32_t find(std::uint32_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  const Vec3& normal(std::uint32_t root) const { return normal_[root]; }
  std::span<const float> feature(std::uint32_t root) const { return feature_.row(root); }
  std::uint32_t count(std::uint32_t root) const { return count_[root]; }

  /// Merge two distinct roots; the larger (then lower-index) root survives.
  std::uint32_t unite(std::uint32_t a, std::uint32_t b) {
    if (count_[b] > count_[a] || (count_[b] == count_[a] && b < a)) std::swap(a, b);
    parent_[b] = a;
    count_[a] += count_[b];
    mass_[a] += mass_[b];
    normal_sum_[a] += normal_sum_[b];
    for (std::size_t d = 0; d < dim_; ++d) feature_sum_[a * dim_ + d] += feature_sum_[b * dim_ + d];
    std::swap(next_[a], next_[b]);
    refresh(a, b);
    return a;
  }

  template <typename F>
  void for_members(std::uint32_t root, F&& f) const {
    std::uint32_t i = root;
    do {
      f(i);
      i = next_[i];
    } while (i != root);
  }

  double mass(std::uint32_t root) const { return mass_[root]; }

 private:
  void refresh(std::uint32_t a, std::uint32_t absorbed) {
    const double nn = normal_sum_[a].norm();
    normal_[a] = nn > 1e-12 ? Vec3(normal_sum_[a] / nn)
                            : (count_[absorbed] > count_[a] - count_[absorbed] ? normal_[absorbed] : normal_[a]);
    const std::span<const double> fs(feature_sum_.data() + a * dim_, dim_);
    const double fn = norm(fs);
    auto row = feature_.row(a);
    if (fn > 1e-12) {
      for (std::size_t d = 0; d < dim_; ++d) row[d] = static_cast<float>(fs[d] / fn);
    }
  }

  std::size_t dim_;
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> next_;
  std::vector<std::uint32_t> count_;
  std::vector<double> mass_;
  std::vector<Vec3> normal_sum_;
  std::vector<double> feature_sum_;
  std::vector<Vec3> normal_;
  FeatureMatrix feature_;
};

}  // namespace

SuperPrimitivePartition segment(const PrimitiveCloud& cloud, const FeatureMatrix& features,
                                std::span<const double> confidence, const AdjacencyGraph& adj,
                                const CutSchedule& sched, const SegmentOptions& options) {
  sched.validate();
  const std::size_t n = cloud.size();
  if (!cloud.has_normals()) throw ConfigError("segmentation needs primitive normals");
  if (features.rows != n) throw ConfigError("feature rows do not match primitive count");
  if (adj.vertex_count() != n) throw ConfigError("adjacency graph does not cover the cloud");
  if (!confidence.empty() && confidence.size() != n) throw ConfigError("confidence size mismatch");

  // Zero-confidence primitives keep a small weight so segments made only of
  // unobserved primitives still have a defined aggregate.
  std::vector<double> weights(n, 1.0);
  if (!confidence.empty()) {
    double sum = 0.0;
    std::size_t positive = 0;
    for (double g : confidence) {
      if (g > 0.0) {
        sum += g;
        ++positive;
      }
    }
    const double floor_weight = positive > 0 ? 1e-6 * sum / static_cast<double>(positive) : 1.0;
    for (std::size_t i = 0; i < n; ++i) weights[i] = std::max(confidence[i], 0.0) + floor_weight;
  }

  SegmentForest forest(cloud, features, weights);
  const auto edges = adj.edges();
  for (std::size_t t = 0; t < sched.iterations(); ++t) {
    const double lambda_f = options.use_language ? sched.lambda_f[t] : -2.0;
    for (const auto& [i, j] : edges) {
      const std::uint32_t ri = forest.find(i);
      const std::uint32_t rj = forest.find(j);
      if (ri == rj) continue;
      if (merge_predicate(forest.normal(ri), forest.normal(rj), forest.feature(ri), forest.feature(rj),
                          sched.lambda_n[t], lambda_f)) {
        forest.unite(ri, rj);
      }
    }
  }

  // Absorb undersized segments into their most normal-similar neighbor.
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::uint32_t> small;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (forest.find(i) == i && forest.count(i) < sched.min_size) small.push_back(i);
    }
    for (std::uint32_t r : small) {
      if (forest.find(r) != r || forest.count(r) >= sched.min_size) continue;
      std::uint32_t best = r;
      double best_cos = -2.0;
      forest.for_members(r, [&](std::uint32_t m) {
        for (std::uint32_t nb : adj.neighbors(m)) {
          const std::uint32_t rn = forest.find(nb);
          if (rn == r) continue;
          const double c = forest.normal(r).dot(forest.normal(rn));
          if (c > best_cos || (c == best_cos && rn < best)) {
            best_cos = c;
            best = rn;
          }
        }
      });
      if (best != r) {
        forest.unite(r, best);
        changed = true;
      }
    }
  }

  SuperPrimitivePartition out;
  out.segment_of.assign(n, 0);
  std::vector<std::uint32_t> id_of_root(n, UINT32_MAX);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t r = forest.find(i);
    if (id_of_root[r] == UINT32_MAX) {
      id_of_root[r] = static_cast<std::uint32_t>(out.segments.size());
      SuperPrimitive sp;
      sp.count = forest.count(r);
      sp.normal = forest.normal(r);
      const auto f = forest.feature(r);
      sp.feature.assign(f.begin(), f.end());
      out.segments.push_back(std::move(sp));
    }
    out.segment_of[i] = id_of_root[r];
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    out.segments[out.segment_of[i]].confidence_mass += confidence.empty() ? 1.0 : confidence[i];
  }
  return out;
}

}  // namespace psplat
