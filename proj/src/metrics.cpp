#include "of3d/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "of3d/text_io.hpp"

namespace of3d {

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

MiouResult miou(const std::vector<int>& predicted, const std::vector<int>& truth,
                std::size_t classes) {
  if (predicted.size() != truth.size()) throw DimensionError("miou: length mismatch");
  std::vector<std::size_t> inter(classes, 0), pred(classes, 0), gt(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;
    const auto g = static_cast<std::size_t>(truth[i]);
    if (g >= classes) throw std::out_of_range("miou: ground-truth class out of range");
    ++gt[g];
    if (predicted[i] >= 0 && static_cast<std::size_t>(predicted[i]) < classes) {
      const auto p = static_cast<std::size_t>(predicted[i]);
      ++pred[p];
      if (p == g) ++inter[p];
    }
  }
  MiouResult r;
  r.per_class.resize(classes);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (gt[c] == 0) continue;
    const double v = static_cast<double>(inter[c]) / static_cast<double>(gt[c] + pred[c] - inter[c]);
    r.per_class[c] = v;
    sum += v;
    ++present;
  }
  r.mean = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

double average_precision(const std::vector<std::vector<double>>& overlap, std::size_t n_gt,
                         double threshold) {
  if (n_gt == 0) return 0.0;
  std::vector<char> taken(n_gt, 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t p = 0; p < overlap.size(); ++p) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < n_gt; ++g) {
      if (!taken[g] && overlap[p][g] > best_iou) {
        best_iou = overlap[p][g];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      taken[static_cast<std::size_t>(best)] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(p + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Shared protocol for masks and boxes: per class, rank predictions, build
// the overlap table and integrate.
template <typename Pred, typename Truth, typename Iou>
std::vector<std::vector<std::optional<double>>> per_class_ap(const std::vector<Pred>& preds,
                                                             const std::vector<Truth>& truths,
                                                             std::size_t classes,
                                                             const std::vector<double>& thresholds,
                                                             Iou&& iou) {
  std::vector<std::vector<std::optional<double>>> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> gts;
    for (std::size_t g = 0; g < truths.size(); ++g) {
      if (truths[g].class_id == static_cast<int>(c)) gts.push_back(g);
    }
    std::vector<std::size_t> ps;
    std::vector<double> scores;
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (preds[p].class_id == static_cast<int>(c)) {
        ps.push_back(p);
        scores.push_back(preds[p].score);
      }
    }
    out[c].resize(thresholds.size());
    if (gts.empty() && ps.empty()) continue;
    std::vector<std::vector<double>> overlap;
    for (std::size_t r : rank_by_score(scores)) {
      std::vector<double> row;
      for (std::size_t g : gts) row.push_back(iou(preds[ps[r]], truths[g]));
      overlap.push_back(std::move(row));
    }
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      out[c][t] = average_precision(overlap, gts.size(), thresholds[t]);
    }
  }
  return out;
}

double mean_over_classes(const std::vector<std::vector<std::optional<double>>>& table,
                         std::size_t t) {
  std::vector<double> v;
  for (const auto& row : table) {
    if (row[t]) v.push_back(*row[t]);
  }
  return mean_of(v);
}

double masked_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                  const std::vector<std::uint8_t>& void_points) {
  if (a.size() != b.size() || (!void_points.empty() && void_points.size() != a.size())) {
    throw DimensionError("mask IoU: length mismatch");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!void_points.empty() && void_points[i]) continue;
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

ApResult instance_ap(const std::vector<ScoredMask>& predictions,
                     const std::vector<LabeledMask>& truths, std::size_t classes,
                     const std::vector<std::uint8_t>& void_points) {
  ApResult r;
  r.thresholds = coco_thresholds();
  std::vector<double> all = r.thresholds;
  all.push_back(0.25);
  auto table = per_class_ap(predictions, truths, classes, all,
                            [&](const ScoredMask& p, const LabeledMask& g) {
                              return masked_iou(p.mask, g.mask, void_points);
                            });
  std::vector<double> per_threshold;
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
    per_threshold.push_back(mean_over_classes(table, t));
  }
  r.mAP = mean_of(per_threshold);
  r.mAP50 = per_threshold[0];
  r.mAP25 = mean_over_classes(table, all.size() - 1);
  r.per_class.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) r.per_class[c] = table[c];
  return r;
}

PqResult panoptic_quality(const std::vector<PanopticLabel>& predicted,
                          const std::vector<PanopticLabel>& truth, const ClassCatalog& catalog) {
  if (predicted.size() != truth.size()) throw DimensionError("panoptic_quality: length mismatch");
  const std::size_t classes = catalog.size();
  using Key = std::pair<int, int>;
  auto key_of = [&](const PanopticLabel& l) -> std::optional<Key> {
    if (l.semantic < 0 || static_cast<std::size_t>(l.semantic) >= classes) return std::nullopt;
    if (!catalog.is_thing(l.semantic)) return Key{l.semantic, -1};
    if (l.instance < 0) return std::nullopt;
    return Key{l.semantic, l.instance};
  };
  std::map<Key, std::size_t> pred_area, gt_area;
  std::map<std::pair<Key, Key>, std::size_t> inter;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].semantic < 0) continue;
    const auto g = key_of(truth[i]);
    if (!g) continue;
    const auto p = key_of(predicted[i]);
    ++gt_area[*g];
    if (!p) continue;
    ++pred_area[*p];
    if (p->first == g->first) ++inter[{*p, *g}];
  }
  // Prediction area counts only points that are valid on the GT side too.
  std::vector<PqClass> acc(classes);
  std::vector<double> iou_sum(classes, 0.0);
  std::map<Key, char> pred_matched, gt_matched;
  for (const auto& [pair, n] : inter) {
    const auto& [p, g] = pair;
    const double uni = static_cast<double>(pred_area[p] + gt_area[g] - n);
    const double iou = static_cast<double>(n) / uni;
    if (iou > 0.5) {
      if (pred_matched[p]++ || gt_matched[g]++) {
        throw std::logic_error("panoptic_quality: segment matched twice above IoU 0.5");
      }
      ++acc[static_cast<std::size_t>(g.first)].tp;
      iou_sum[static_cast<std::size_t>(g.first)] += iou;
    }
  }
  for (const auto& [p, _] : pred_area) {
    if (!pred_matched[p]) ++acc[static_cast<std::size_t>(p.first)].fp;
  }
  for (const auto& [g, _] : gt_area) {
    if (!gt_matched[g]) ++acc[static_cast<std::size_t>(g.first)].fn;
  }
  PqResult r;
  r.per_class.resize(classes);
  std::vector<double> all, things, stuff;
  for (std::size_t c = 0; c < classes; ++c) {
    PqClass& a = acc[c];
    if (a.tp + a.fp + a.fn == 0) continue;
    const double tp = static_cast<double>(a.tp);
    const double denom = tp + 0.5 * static_cast<double>(a.fp) + 0.5 * static_cast<double>(a.fn);
    a.pq = iou_sum[c] / denom;
    a.sq = a.tp ? iou_sum[c] / tp : 0.0;
    a.rq = tp / denom;
    r.per_class[c] = a;
    all.push_back(a.pq);
    (catalog.is_thing(static_cast<int>(c)) ? things : stuff).push_back(a.pq);
  }
  r.pq = mean_of(all);
  r.pq_things = mean_of(things);
  r.pq_stuff = mean_of(stuff);
  return r;
}

double box_iou(const AxisBox& a, const AxisBox& b) {
  double inter = 1.0, va = 1.0, vb = 1.0;
  for (int d = 0; d < 3; ++d) {
    inter *= std::max(0.0, std::min(a.max[d], b.max[d]) - std::max(a.min[d], b.min[d]));
    va *= a.max[d] - a.min[d];
    vb *= b.max[d] - b.min[d];
  }
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BoxApResult box_ap(const std::vector<ScoredBox>& predictions,
                   const std::vector<LabeledBox>& truths, std::size_t classes) {
  BoxApResult r;
  r.per_class = per_class_ap(predictions, truths, classes, {0.25, 0.5},
                             [](const ScoredBox& p, const LabeledBox& g) {
                               return box_iou(p.box, g.box);
                             });
  r.mAP25 = mean_over_classes(r.per_class, 0);
  r.mAP50 = mean_over_classes(r.per_class, 1);
  return r;
}

// ---- scene-level report ------------------------------------------------------

EvalReport evaluate(const Prediction& prediction, const Partition& partition, const Scene& truth) {
  if (partition.points() != truth.size()) {
    throw DimensionError("evaluate: partition covers " + std::to_string(partition.points()) +
                         " points, scene has " + std::to_string(truth.size()));
  }
  auto check_segments = [&](std::size_t n, const char* what) {
    if (n != partition.segments) {
      throw DimensionError(std::string("evaluate: ") + what + " has " + std::to_string(n) +
                           " segments, partition has " + std::to_string(partition.segments));
    }
  };
  const std::size_t n = truth.size();
  const std::size_t classes = truth.catalog.size();
  EvalReport r;
  r.catalog = truth.catalog;
  std::vector<std::uint8_t> void_points(n);
  for (std::size_t i = 0; i < n; ++i) void_points[i] = truth.semantic_id[i] < 0;

  if (prediction.semantic) {
    check_segments(prediction.semantic->size(), "semantic section");
    r.semantic = miou(unpool(*prediction.semantic, partition), truth.semantic_id, classes);
  }
  if (prediction.instances) {
    std::map<int, LabeledMask> objects;
    std::map<int, LabeledBox> object_boxes;
    for (std::size_t i = 0; i < n; ++i) {
      const int id = truth.instance_id[i];
      if (id < 0 || truth.semantic_id[i] < 0) continue;
      auto& obj = objects[id];
      if (obj.mask.empty()) {
        obj.mask.assign(n, 0);
        obj.class_id = truth.semantic_id[i];
      }
      obj.mask[i] = 1;
      const Point& p = truth.points[i];
      const double c[3] = {p.x, p.y, p.z};
      auto [it, fresh] = object_boxes.try_emplace(id);
      it->second.class_id = truth.semantic_id[i];
      for (int d = 0; d < 3; ++d) {
        it->second.box.min[d] = fresh ? c[d] : std::min(it->second.box.min[d], c[d]);
        it->second.box.max[d] = fresh ? c[d] : std::max(it->second.box.max[d], c[d]);
      }
    }
    std::vector<LabeledMask> truths;
    std::vector<LabeledBox> boxes;
    for (auto& [_, m] : objects) truths.push_back(std::move(m));
    for (auto& [_, b] : object_boxes) boxes.push_back(b);
    std::vector<ScoredMask> preds;
    for (const auto& inst : *prediction.instances) {
      check_segments(inst.mask.size(), "instance mask");
      preds.push_back({inst.class_id, inst.score, unpool(inst.mask, partition)});
    }
    r.instance = instance_ap(preds, truths, classes, void_points);
    r.boxes = box_ap(boxes_from_instances(*prediction.instances, partition, truth), boxes, classes);
  }
  if (prediction.panoptic) {
    check_segments(prediction.panoptic->size(), "panoptic section");
    std::vector<PanopticLabel> gt(n);
    for (std::size_t i = 0; i < n; ++i) gt[i] = {truth.semantic_id[i], truth.instance_id[i]};
    r.panoptic = panoptic_quality(unpool(*prediction.panoptic, partition), gt, truth.catalog);
  }
  return r;
}

std::string format_report(const EvalReport& r) {
  auto v = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string("na"); };
  auto opt = [](bool have, double x) { return have ? std::optional<double>(x) : std::nullopt; };
  std::string out;
  out += "mIoU " + v(opt(r.semantic.has_value(), r.semantic ? r.semantic->mean : 0)) + "\n";
  out += "mAP " + v(opt(r.instance.has_value(), r.instance ? r.instance->mAP : 0)) + "\n";
  out += "mAP50 " + v(opt(r.instance.has_value(), r.instance ? r.instance->mAP50 : 0)) + "\n";
  out += "mAP25 " + v(opt(r.instance.has_value(), r.instance ? r.instance->mAP25 : 0)) + "\n";
  out += "PQ " + v(opt(r.panoptic.has_value(), r.panoptic ? r.panoptic->pq : 0)) + "\n";
  out += "PQ_th " + v(opt(r.panoptic.has_value(), r.panoptic ? r.panoptic->pq_things : 0)) + "\n";
  out += "PQ_st " + v(opt(r.panoptic.has_value(), r.panoptic ? r.panoptic->pq_stuff : 0)) + "\n";
  out += "box_mAP25 " + v(opt(r.boxes.has_value(), r.boxes ? r.boxes->mAP25 : 0)) + "\n";
  out += "box_mAP50 " + v(opt(r.boxes.has_value(), r.boxes ? r.boxes->mAP50 : 0)) + "\n";
  for (std::size_t c = 0; c < r.catalog.size(); ++c) {
    std::optional<double> iou, ap, ap50, ap25, pq;
    if (r.semantic) iou = r.semantic->per_class[c];
    if (r.instance) {
      const auto& row = r.instance->per_class[c];
      if (row.front()) {
        std::vector<double> t;
        for (std::size_t k = 0; k < r.instance->thresholds.size(); ++k) t.push_back(*row[k]);
        ap = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
        ap50 = *row[0];
        ap25 = *row.back();
      }
    }
    if (r.panoptic && r.panoptic->per_class[c]) pq = r.panoptic->per_class[c]->pq;
    out += "class " + r.catalog[c].name + " iou " + v(iou) + " ap " + v(ap) + " ap50 " + v(ap50) +
           " ap25 " + v(ap25) + " pq " + v(pq) + "\n";
  }
  return out;
}

}  // namespace of3d
