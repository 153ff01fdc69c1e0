#include "psplat/metrics.hpp"

#include <algorithm>
#include <map>
#include <tuple>

namespace psplat {

void GroundTruth::validate() const {
  if (instance_of.size() != class_of.size()) throw ConfigError("ground truth arrays differ in length");
  if (!names.empty() && names.size() != kinds.size()) throw ConfigError("ground truth class names mismatch");
  for (std::size_t i = 0; i < class_of.size(); ++i) {
    if (class_of[i] < -1 || class_of[i] >= static_cast<std::int32_t>(kinds.size())) {
      throw ConfigError("ground truth class out of range at primitive " + std::to_string(i));
    }
    if (instance_of[i] < -1) throw ConfigError("ground truth instance out of range at primitive " + std::to_string(i));
  }
}

namespace {

struct Confusion {
  std::vector<std::uint64_t> gt_count, pred_count, hit;
};

Confusion count(std::span<const std::int32_t> pred, const GroundTruth& gt) {
  if (pred.size() != gt.size()) throw ConfigError("prediction and ground truth differ in length");
  const std::size_t k = gt.class_count();
  Confusion c{std::vector<std::uint64_t>(k, 0), std::vector<std::uint64_t>(k, 0), std::vector<std::uint64_t>(k, 0)};
  bool any = false;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::int32_t g = gt.class_of[i];
    if (g < 0) continue;
    any = true;
    ++c.gt_count[static_cast<std::size_t>(g)];
    const std::int32_t p = pred[i];
    if (p >= 0 && static_cast<std::size_t>(p) < k) {
      ++c.pred_count[static_cast<std::size_t>(p)];
      if (p == g) ++c.hit[static_cast<std::size_t>(g)];
    }
  }
  if (!any) throw Error("evaluation needs at least one labeled ground-truth primitive");
  return c;
}

}  // namespace

SemanticScore miou(std::span<const std::int32_t> pred_classes, const GroundTruth& gt) {
  const auto c = count(pred_classes, gt);
  SemanticScore out;
  out.per_class.resize(gt.class_count());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < gt.class_count(); ++k) {
    if (c.gt_count[k] == 0) continue;
    const double uni = static_cast<double>(c.gt_count[k] + c.pred_count[k] - c.hit[k]);
    out.per_class[k] = static_cast<double>(c.hit[k]) / uni;
    sum += *out.per_class[k];
    ++present;
  }
  out.mean = sum / static_cast<double>(present);
  return out;
}

SemanticScore macc(std::span<const std::int32_t> pred_classes, const GroundTruth& gt) {
  const auto c = count(pred_classes, gt);
  SemanticScore out;
  out.per_class.resize(gt.class_count());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < gt.class_count(); ++k) {
    if (c.gt_count[k] == 0) continue;
    out.per_class[k] = static_cast<double>(c.hit[k]) / static_cast<double>(c.gt_count[k]);
    sum += *out.per_class[k];
    ++present;
  }
  out.mean = sum / static_cast<double>(present);
  return out;
}

PrqScore prq(const PanopticLabeling& pred, const GroundTruth& gt) {
  if (pred.size() != gt.size()) throw ConfigError("prediction and ground truth differ in length");
  const std::size_t k = gt.class_count();
  const auto is_stuff = [&](std::size_t cls) { return gt.kinds[cls] == ClassKind::Stuff; };

  // Segment keys: stuff classes form one region per class, things one per id.
  using Key = std::pair<std::int32_t, std::int64_t>;  // (class, region)
  std::map<Key, std::uint64_t> pred_size, gt_size;
  std::map<std::pair<Key, Key>, std::uint64_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t gc = gt.class_of[i];
    if (gc < 0) continue;
    std::optional<Key> gk, pk;
    if (is_stuff(static_cast<std::size_t>(gc))) {
      gk = Key{gc, -1};
    } else if (gt.instance_of[i] >= 0) {
      gk = Key{gc, gt.instance_of[i]};
    }
    const std::int32_t pc = pred.class_of[i];
    if (pc >= 0 && static_cast<std::size_t>(pc) < k && pred.instance_of[i] >= 0) {
      pk = is_stuff(static_cast<std::size_t>(pc)) ? Key{pc, -1} : Key{pc, pred.instance_of[i]};
    }
    if (gk) ++gt_size[*gk];
    if (pk) ++pred_size[*pk];
    if (gk && pk && gk->first == pk->first) ++inter[{*pk, *gk}];
  }

  PrqScore out;
  out.per_class.resize(k);
  std::vector<std::size_t> gt_present(k, 0);
  for (const auto& [key, n] : gt_size) gt_present[static_cast<std::size_t>(key.first)] = 1;

  struct Match {
    double iou;
    Key p, g;
  };
  std::vector<Match> candidates;
  for (const auto& [pair, n] : inter) {
    const double uni = static_cast<double>(pred_size[pair.first] + gt_size[pair.second] - n);
    const double iou = static_cast<double>(n) / uni;
    if (iou > 0.5) candidates.push_back({iou, pair.first, pair.second});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.p, a.g) < std::tie(b.p, b.g);
  });
  std::map<Key, bool> pred_used, gt_used;
  for (const auto& m : candidates) {
    if (pred_used[m.p] || gt_used[m.g]) continue;
    pred_used[m.p] = gt_used[m.g] = true;
    auto& cs = out.per_class[static_cast<std::size_t>(m.g.first)];
    ++cs.tp;
    cs.matched_iou_sum += m.iou;
  }
  for (const auto& [key, n] : pred_size) {
    if (!pred_used[key]) ++out.per_class[static_cast<std::size_t>(key.first)].fp;
  }
  for (const auto& [key, n] : gt_size) {
    if (!gt_used[key]) ++out.per_class[static_cast<std::size_t>(key.first)].fn;
  }

  double thing_sum = 0.0, stuff_sum = 0.0;
  std::size_t things = 0, stuffs = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (!gt_present[c]) continue;
    auto& cs = out.per_class[c];
    const double denom = cs.tp + 0.5 * cs.fp + 0.5 * cs.fn;
    cs.prq = denom > 0.0 ? cs.matched_iou_sum / denom : 0.0;
    if (is_stuff(c)) {
      stuff_sum += *cs.prq;
      ++stuffs;
    } else {
      thing_sum += *cs.prq;
      ++things;
    }
  }
  if (things > 0) out.thing = thing_sum / static_cast<double>(things);
  if (stuffs > 0) out.stuff = stuff_sum / static_cast<double>(stuffs);
  return out;
}

EvalReport evaluate(const PanopticLabeling& pred, const GroundTruth& gt) {
  gt.validate();
  const auto iou = miou(pred.class_of, gt);
  const auto acc = macc(pred.class_of, gt);
  auto pq = prq(pred, gt);
  EvalReport report;
  report.miou = iou.mean;
  report.macc = acc.mean;
  report.prq_thing = pq.thing;
  report.prq_stuff = pq.stuff;
  report.per_class = std::move(pq.per_class);
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    report.per_class[c].iou = iou.per_class[c];
    report.per_class[c].accuracy = acc.per_class[c];
  }
  return report;
}

}  // namespace psplat
