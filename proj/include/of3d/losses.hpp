#pragma once

// Training objective: total = beta·cls + bce + dice + sem.

#include <cstdint>
#include <span>
#include <vector>

#include "of3d/matching.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

struct LossWeights {
  double beta = 0.5;    // classification term in the objective
  double lambda = 0.5;  // classification term in the matching cost
};

// Cross-entropy over all proposals; unmatched ones target the last
// (no-object) column. class_column[k] is object k's target column.
Tensor cls_loss(const Tensor& class_logits, const Assignment& assignment,
                std::span<const int> class_column);

struct MaskLosses {
  Tensor bce;   // mean over matched pairs of the per-pair mean BCE
  Tensor dice;  // mean over matched pairs of the smoothed Dice term
  bool empty = false;  // no matched pairs: both terms are constant zero
};

// mask_logits: M × proposals. Unmatched proposals contribute nothing.
MaskLosses mask_losses(const Tensor& mask_logits, const Assignment& assignment,
                       const std::vector<std::vector<std::uint8_t>>& object_masks);

// Mean BCE over (segment, class) cells of M × K_sem logits against
// class_masks (K_sem × M). Segments flagged in `ignore` are left out; all
// ignored gives constant zero.
Tensor semantic_loss(const Tensor& semantic_logits,
                     const std::vector<std::vector<std::uint8_t>>& class_masks,
                     std::span<const std::uint8_t> ignore = {});

struct LossParts {
  Tensor cls, bce, dice, sem, total;
};

// Fills parts.total from the other four.
void total_loss(LossParts& parts, const LossWeights& weights);

}  // namespace of3d
