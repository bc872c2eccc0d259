#pragma once

// Turns decoder outputs into instance proposals, a semantic labeling and a
// fused panoptic labeling, plus the prediction file format:
//
//   OF3D-PRED v1
//   semantic                 (optional section)
//   <M semantic ids>
//   instances <n>            (optional section)
//   <class> <score>          n times, each followed by
//   <M 0/1 mask values>
//   panoptic                 (optional section)
//   <M semantic,instance pairs>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "of3d/decoder.hpp"
#include "of3d/partition.hpp"
#include "of3d/scene.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

struct InferenceConfig {
  double mask_threshold = 0.5;
  double nms_sigma = 2.0;
  std::size_t nms_top_k = 100;
};

struct InstanceProposal {
  std::vector<std::uint8_t> mask;  // per segment
  int class_id = -1;               // catalog id
  double class_score = 0.0;        // p
  double mask_score = 0.0;         // q: mean probability inside the mask
  double score = 0.0;              // p·q, then decayed by NMS
  std::size_t query = 0;
};

// Keeps proposals whose classifier argmax is a thing class and whose
// binarized mask (probability > threshold) is nonempty. Order follows the
// query index.
std::vector<InstanceProposal> decode_instances(const Tensor& instance_logits,
                                               const Tensor& class_logits,
                                               const ClassCatalog& catalog,
                                               double threshold = 0.5);

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// Gaussian matrix NMS within each class. Returns proposals sorted by
// decayed score (descending, stable), truncated to top_k.
std::vector<InstanceProposal> matrix_nms(std::vector<InstanceProposal> proposals,
                                         double sigma = 2.0, std::size_t top_k = 100);

// Argmax over classes per segment; ties toward the lower class id.
std::vector<int> decode_semantic(const Tensor& semantic_logits);

struct PanopticLabel {
  int semantic = -1;
  int instance = -1;
  bool operator==(const PanopticLabel&) const = default;
};

struct PredictedInstance {
  int class_id = -1;
  double score = 0.0;
  std::vector<std::uint8_t> mask;
  bool operator==(const PredictedInstance&) const = default;
};

// Starts from the semantic labeling, then overlays instances in ascending
// score order; instance ids are positions in `instances`. On equal scores
// the instance listed first wins.
std::vector<PanopticLabel> fuse_panoptic(const std::vector<int>& semantic,
                                         const std::vector<PredictedInstance>& instances);

struct ScoredBox {
  AxisBox box;
  int class_id = -1;
  double score = 0.0;
};

// Tight axis-aligned boxes around the member points of each instance.
std::vector<ScoredBox> boxes_from_instances(const std::vector<PredictedInstance>& instances,
                                            const Partition& partition, const Scene& scene);

struct Prediction {
  std::optional<std::vector<int>> semantic;
  std::optional<std::vector<PredictedInstance>> instances;
  std::optional<std::vector<PanopticLabel>> panoptic;

  bool operator==(const Prediction&) const = default;
};

// Full head: proposals -> NMS, semantic argmax and panoptic fusion, with
// sections present according to the query mode.
Prediction predict(const MaskLogits& logits, const Tensor& class_logits,
                   const ClassCatalog& catalog, const InferenceConfig& config);

std::string format_prediction(const Prediction& prediction);
Prediction parse_prediction(const std::string& text, const std::string& source = "<prediction>");
void save_prediction(const Prediction& prediction, const std::filesystem::path& path);
Prediction load_prediction(const std::filesystem::path& path);

}  // namespace of3d
