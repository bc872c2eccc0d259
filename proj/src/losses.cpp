#include "of3d/losses.hpp"

#include <numeric>

namespace of3d {

Tensor cls_loss(const Tensor& class_logits, const Assignment& assignment,
                std::span<const int> class_column) {
  const std::size_t k_ins = class_logits.rows();
  const int no_object = static_cast<int>(class_logits.cols()) - 1;
  std::vector<int> targets(k_ins, no_object);
  for (const auto& [i, k] : assignment.pairs) {
    if (i >= k_ins || k >= class_column.size()) {
      throw DimensionError("cls_loss: pair (" + std::to_string(i) + ", " + std::to_string(k) +
                           ") out of range");
    }
    targets[i] = class_column[k];
  }
  return cross_entropy(class_logits, targets);
}

MaskLosses mask_losses(const Tensor& mask_logits, const Assignment& assignment,
                       const std::vector<std::vector<std::uint8_t>>& object_masks) {
  MaskLosses out;
  if (assignment.pairs.empty()) {
    out.bce = Tensor::scalar(0.0);
    out.dice = Tensor::scalar(0.0);
    out.empty = true;
    return out;
  }
  const std::size_t m = mask_logits.rows();
  const std::size_t pairs = assignment.pairs.size();
  std::vector<std::size_t> columns;
  std::vector<double> target(m * pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto [i, k] = assignment.pairs[p];
    if (k >= object_masks.size() || object_masks[k].size() != m) {
      throw DimensionError("mask_losses: object " + std::to_string(k) + " mask does not span " +
                           std::to_string(m) + " segments");
    }
    columns.push_back(i);
    for (std::size_t s = 0; s < m; ++s) target[s * pairs + p] = object_masks[k][s];
  }
  const Tensor logits = gather_cols(mask_logits, columns);
  const Tensor t = Tensor::from({m, pairs}, std::move(target));
  out.bce = bce_with_logits(logits, t);
  out.dice = dice_with_logits(logits, t);
  return out;
}

Tensor semantic_loss(const Tensor& semantic_logits,
                     const std::vector<std::vector<std::uint8_t>>& class_masks,
                     std::span<const std::uint8_t> ignore) {
  const std::size_t m = semantic_logits.rows();
  const std::size_t classes = semantic_logits.cols();
  if (class_masks.size() != classes || (!ignore.empty() && ignore.size() != m)) {
    throw DimensionError("semantic_loss: logits " + shape_string(semantic_logits.shape()) +
                         " vs " + std::to_string(class_masks.size()) + " class masks");
  }
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < m; ++s) {
    if (ignore.empty() || !ignore[s]) rows.push_back(s);
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  std::vector<double> target(rows.size() * classes);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (class_masks[c].size() != m) throw DimensionError("semantic_loss: class mask length");
      target[r * classes + c] = class_masks[c][rows[r]];
    }
  }
  const Tensor logits =
      rows.size() == m ? semantic_logits : gather_rows(semantic_logits, rows);
  return bce_with_logits(logits, Tensor::from({rows.size(), classes}, std::move(target)));
}

void total_loss(LossParts& parts, const LossWeights& weights) {
  parts.total = add(add(add(scale(parts.cls, weights.beta), parts.bce), parts.dice), parts.sem);
}

}  // namespace of3d
