#pragma once

// Point-level evaluation: semantic mIoU, instance AP over IoU thresholds,
// panoptic quality and box AP. Ground-truth points with semantic id -1 are
// void and take part in no computation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "of3d/inference.hpp"
#include "of3d/partition.hpp"
#include "of3d/scene.hpp"

namespace of3d {

// 0.50, 0.55, ..., 0.95
std::vector<double> coco_thresholds();

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // empty optional: class absent from GT
  double mean = 0.0;
};

MiouResult miou(const std::vector<int>& predicted, const std::vector<int>& truth,
                std::size_t classes);

struct ScoredMask {
  int class_id = -1;
  double score = 0.0;
  std::vector<std::uint8_t> mask;  // per point
};

struct LabeledMask {
  int class_id = -1;
  std::vector<std::uint8_t> mask;
};

// Average precision of one ranked list at one threshold. `overlap[p][g]` is
// the IoU of prediction p (in rank order) with ground truth g. Each
// prediction takes the unmatched ground truth of highest IoU (ties toward the
// lower index) when that IoU reaches the threshold. The area is taken under
// the all-point precision envelope; no ground truth gives 0.
double average_precision(const std::vector<std::vector<double>>& overlap, std::size_t n_gt,
                         double threshold);

struct ApResult {
  std::vector<double> thresholds;
  // per_class[c][t] over `thresholds`, plus a final entry at 0.25; empty
  // optionals for classes absent from both sides.
  std::vector<std::vector<std::optional<double>>> per_class;
  double mAP = 0.0;
  double mAP50 = 0.0;
  double mAP25 = 0.0;
};

// `void_points` (may be empty) are removed from every mask first. Classes
// are catalog ids in [0, classes).
ApResult instance_ap(const std::vector<ScoredMask>& predictions,
                     const std::vector<LabeledMask>& truths, std::size_t classes,
                     const std::vector<std::uint8_t>& void_points = {});

struct PqClass {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct PqResult {
  std::vector<std::optional<PqClass>> per_class;  // empty when the class has no segments
  double pq = 0.0;
  double pq_things = 0.0;
  double pq_stuff = 0.0;
};

// Segments are (semantic, instance) groups; stuff classes group by semantic
// id alone. Ground-truth points that are void, or of a thing class without
// an instance id, are dropped. Predicted labels of the same kind form no
// segment, but their points still count toward ground-truth areas.
PqResult panoptic_quality(const std::vector<PanopticLabel>& predicted,
                          const std::vector<PanopticLabel>& truth, const ClassCatalog& catalog);

struct LabeledBox {
  AxisBox box;
  int class_id = -1;
};

double box_iou(const AxisBox& a, const AxisBox& b);

struct BoxApResult {
  double mAP25 = 0.0;
  double mAP50 = 0.0;
  std::vector<std::vector<std::optional<double>>> per_class;  // [class][0: 0.25, 1: 0.5]
};

BoxApResult box_ap(const std::vector<ScoredBox>& predictions,
                   const std::vector<LabeledBox>& truths, std::size_t classes);

// ---- scene-level report ------------------------------------------------------

struct EvalReport {
  std::optional<MiouResult> semantic;
  std::optional<ApResult> instance;
  std::optional<PqResult> panoptic;
  std::optional<BoxApResult> boxes;
  ClassCatalog catalog;
};

// Unpools the segment-level prediction through `partition` and scores it
// against the scene's point labels.
EvalReport evaluate(const Prediction& prediction, const Partition& partition, const Scene& truth);

// Fixed key set, `na` for sections the prediction lacks:
//   mIoU mAP mAP50 mAP25 PQ PQ_th PQ_st box_mAP25 box_mAP50
// then one `class <name> iou <v> ap <v> ap50 <v> ap25 <v> pq <v>` line per class.
std::string format_report(const EvalReport& report);

}  // namespace of3d
