#pragma once

// Independent oracles: straight-line re-evaluations of the library's math,
// written without reusing any library code path they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Core>

#include "psplat/feature_field.hpp"
#include "psplat/graph_clustering.hpp"
#include "psplat/metrics.hpp"

namespace psplat::oracle {

/// Decoder forward pass with Eigen matrices.
inline std::vector<double> decode(const FeatureDecoder& dec, const std::vector<double>& g) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  for (int l = 0; l < 3; ++l) {
    const auto& layer = dec.layers()[l];
    Eigen::MatrixXd w(layer.outputs, layer.inputs);
    for (int o = 0; o < layer.outputs; ++o)
      for (int i = 0; i < layer.inputs; ++i) w(o, i) = layer.weight[static_cast<std::size_t>(o) * layer.inputs + i];
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(layer.bias.data(), layer.outputs);
    x = w * x + b;
    if (l < 2) x = x.cwiseMax(0.0);
  }
  const double n = x.norm();
  std::vector<double> out(static_cast<std::size_t>(x.size()), 0.0);
  if (n == 0.0) {
    out[0] = 1.0;
    return out;
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = x[i] / n;
  return out;
}

/// Bilinear tri-plane lookup written directly from the definition.
inline std::vector<double> query_latent(const PyramidTriPlane& tp, const Vec3& p) {
  std::vector<double> out;
  Vec3 n;
  for (int a = 0; a < 3; ++a)
    n[a] = std::clamp((p[a] - tp.aabb().lo[a]) / (tp.aabb().hi[a] - tp.aabb().lo[a]), 0.0, 1.0);
  const int c_count = tp.channels();
  for (const auto& level : tp.levels()) {
    const int r = level.resolution;
    for (int pl = 0; pl < 3; ++pl) {
      const double u = n[kPlaneAxes[pl][0]] * (r - 1), v = n[kPlaneAxes[pl][1]] * (r - 1);
      const int i = std::min(int(std::floor(u)), r - 2), j = std::min(int(std::floor(v)), r - 2);
      const double tx = u - i, ty = v - j;
      const auto at = [&](int a, int b, int c) { return level.planes[pl][(std::size_t(b) * r + a) * c_count + c]; };
      for (int c = 0; c < c_count; ++c) {
        out.push_back((1 - tx) * (1 - ty) * at(i, j, c) + tx * (1 - ty) * at(i + 1, j, c) +
                      (1 - tx) * ty * at(i, j + 1, c) + tx * ty * at(i + 1, j + 1, c));
      }
    }
  }
  return out;
}

/// Confidence-weighted cosine distance of a batch via the oracle forward pass.
inline double batch_loss(const LanguageField& f, std::span<const DistillSample> batch) {
  double total = 0.0;
  for (const auto& s : batch) {
    const auto y = decode(f.decoder, query_latent(f.planes, s.position));
    double dot = 0.0, tn = 0.0;
    for (std::size_t d = 0; d < y.size(); ++d) {
      dot += y[d] * s.target[d];
      tn += double(s.target[d]) * s.target[d];
    }
    total += s.gamma * std::abs(1.0 - dot / std::sqrt(tn));
  }
  return total;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
};

/// Central differences of the oracle loss against the analytic gradient for
/// every parameter. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck gradient_check(LanguageField field, std::span<const DistillSample> batch, double h,
                                double floor = 1e-6) {
  LanguageField grad = field.zeros_like();
  feature_loss(field, batch, &grad);
  auto params = field.parameter_blocks();
  const auto grads = std::as_const(grad).parameter_blocks();
  GradCheck out;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t k = 0; k < params[b].size(); ++k) {
      const double orig = params[b][k];
      params[b][k] = orig + h;
      const double up = batch_loss(field, batch);
      params[b][k] = orig - h;
      const double down = batch_loss(field, batch);
      params[b][k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[b][k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic) / denom);
      ++out.parameters;
    }
  }
  return out;
}

/// Base-2 Jensen-Shannon divergence over dense probability vectors.
inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  double kp = 0.0, kq = 0.0;
  for (std::size_t z = 0; z < p.size(); ++z) {
    const double y = 0.5 * (p[z] + q[z]);
    if (p[z] > 0) kp += p[z] * std::log2(p[z] / y);
    if (q[z] > 0) kq += q[z] * std::log2(q[z] / y);
  }
  return 0.5 * kp + 0.5 * kq;
}

/// PRQ with exhaustive search over one-to-one matchings maximizing the
/// matched count, restricted to IoU > 0.5 pairs.
inline PrqScore prq_brute_force(const PanopticLabeling& pred, const GroundTruth& gt) {
  PrqScore score;
  score.per_class.resize(gt.class_count());
  std::vector<double> thing, stuff;
  for (std::size_t c = 0; c < gt.class_count(); ++c) {
    const bool is_stuff = gt.kinds[c] == ClassKind::Stuff;
    // Segments as primitive sets; stuff collapses to one region per class.
    std::map<long, std::set<std::size_t>> gseg, pseg;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.class_of[i] < 0) continue;
      if (gt.class_of[i] == static_cast<int>(c)) gseg[is_stuff ? 0 : gt.instance_of[i]].insert(i);
      if (pred.class_of[i] == static_cast<int>(c)) pseg[is_stuff ? 0 : pred.instance_of[i]].insert(i);
    }
    if (gseg.empty()) continue;
    std::vector<std::set<std::size_t>> g, p;
    for (auto& [k, v] : gseg) g.push_back(v);
    for (auto& [k, v] : pseg) p.push_back(v);
    std::vector<std::vector<double>> iou(g.size(), std::vector<double>(p.size()));
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = 0; b < p.size(); ++b) {
        std::size_t inter = 0;
        for (auto x : g[a]) inter += p[b].count(x);
        iou[a][b] = double(inter) / double(g[a].size() + p[b].size() - inter);
      }
    // Every assignment of GT segments to distinct predictions (or none).
    double best_sum = 0.0;
    std::size_t best_tp = 0;
    std::vector<int> assign(g.size(), -1);
    std::vector<char> used(p.size(), 0);
    auto rec = [&](auto& self, std::size_t a, std::size_t tp, double sum) -> void {
      if (a == g.size()) {
        if (tp > best_tp || (tp == best_tp && sum > best_sum)) {
          best_tp = tp;
          best_sum = sum;
        }
        return;
      }
      self(self, a + 1, tp, sum);
      for (std::size_t b = 0; b < p.size(); ++b) {
        if (used[b] || !(iou[a][b] > 0.5)) continue;
        used[b] = 1;
        self(self, a + 1, tp + 1, sum + iou[a][b]);
        used[b] = 0;
      }
    };
    rec(rec, 0, 0, 0.0);
    const double fp = double(p.size() - best_tp), fn = double(g.size() - best_tp);
    const double v = best_sum / (best_tp + 0.5 * fp + 0.5 * fn);
    score.per_class[c].prq = v;
    (is_stuff ? stuff : thing).push_back(v);
  }
  const auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  score.thing = mean(thing);
  score.stuff = mean(stuff);
  return score;
}

}  // namespace psplat::oracle
