#pragma once

// Point-to-segment partitions (voxels or superpoints), average pooling of
// point features onto segments, and projection of point annotations onto
// segments.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "of3d/scene.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

enum class PoolingMode { voxel, superpoint };

std::string to_string(PoolingMode mode);
PoolingMode pooling_mode_from_string(const std::string& s);

struct Partition {
  PoolingMode mode = PoolingMode::superpoint;
  std::vector<std::size_t> segment_of;  // per point, in [0, segments)
  std::size_t segments = 0;
  double voxel_size = 0.0;  // voxel mode only

  std::size_t points() const { return segment_of.size(); }
  std::vector<std::size_t> sizes() const;
  std::vector<std::vector<std::size_t>> members() const;
};

// Throws std::invalid_argument unless every point is assigned and every
// segment is nonempty.
void validate_partition(const Partition& partition);

Partition voxelize(const Scene& scene, double voxel_size);

struct SuperpointParams {
  int k = 16;
  double angle_deg = 20.0;
  double color_bound = 0.2;
  int min_size = 5;
};

struct SuperpointDiagnostics {
  std::size_t degenerate_normals = 0;
  std::size_t merged_small_segments = 0;
};

// Region growing over the kNN graph: neighbors join when their local plane
// normals differ by less than angle_deg and their colors by less than
// color_bound; undersized segments merge into the nearest other segment.
Partition build_superpoints(const Scene& scene, const SuperpointParams& params,
                            SuperpointDiagnostics* diagnostics = nullptr);

// Dense relabeling of precomputed per-point segment labels, ordered by label.
Partition partition_from_labels(std::span<const int> labels);

struct PartitionConfig {
  PoolingMode mode = PoolingMode::superpoint;
  double voxel_size = 0.02;
  SuperpointParams superpoint;
};

// Superpoint mode uses the scene's precomputed segment labels when present.
Partition make_partition(const Scene& scene, const PartitionConfig& config,
                         SuperpointDiagnostics* diagnostics = nullptr);

// Row-normalized M×N averaging operator.
SparseMatrix pooling_matrix(const Partition& partition);
Tensor pool(const Tensor& features, const Partition& partition);

struct SegmentGroundTruth {
  std::vector<int> segment_instance;  // scene instance id per segment, -1 none
  std::vector<int> segment_semantic;  // -1 unlabeled
  // Ground-truth objects in ascending scene instance id; index = k.
  std::vector<int> instance_ids;
  std::vector<int> instance_class;  // catalog id c_k
  std::vector<std::vector<std::uint8_t>> instance_masks;  // K_gt × M
  std::vector<std::vector<std::uint8_t>> semantic_masks;  // K_sem × M
  std::vector<int> segment_gt;  // k per segment, -1 none
  std::size_t lost_instances = 0;  // scene instances that own no segment

  std::size_t segments() const { return segment_instance.size(); }
};

// Majority vote per segment. An instance wins by plurality (ties toward the
// smaller id); -1 wins only with a strict majority of the segment's points.
// Semantics vote the same way, except that a segment owned by an instance
// takes that instance's class.
SegmentGroundTruth project_ground_truth(const Scene& scene, const Partition& partition);

template <typename T>
std::vector<T> unpool(std::span<const T> per_segment, const Partition& partition) {
  if (per_segment.size() != partition.segments) {
    throw DimensionError("unpool: " + std::to_string(per_segment.size()) +
                         " values for " + std::to_string(partition.segments) + " segments");
  }
  std::vector<T> out;
  out.reserve(partition.points());
  for (std::size_t s : partition.segment_of) out.push_back(per_segment[s]);
  return out;
}

template <typename T>
std::vector<T> unpool(const std::vector<T>& per_segment, const Partition& partition) {
  return unpool(std::span<const T>(per_segment), partition);
}

}  // namespace of3d
