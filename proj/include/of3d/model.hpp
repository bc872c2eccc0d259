#pragma once

// End-to-end model: encoder -> pooling -> decoder -> mask logits, together
// with everything inference needs to rerun it (partitioning and head
// settings), stored alongside the weights as `meta.*` scalars.

#include <cstdint>
#include <vector>

#include "of3d/checkpoint.hpp"
#include "of3d/decoder.hpp"
#include "of3d/encoder.hpp"
#include "of3d/inference.hpp"
#include "of3d/matching.hpp"
#include "of3d/partition.hpp"
#include "of3d/scene.hpp"

namespace of3d {

inline constexpr int kModelFormatVersion = 1;

struct ModelSpec {
  EncoderConfig encoder;
  DecoderConfig decoder;  // channels must equal encoder.channels
  PartitionConfig partition;
  InferenceConfig inference;
};

// Fills decoder class counts from the catalog.
ModelSpec make_model_spec(const ClassCatalog& catalog, EncoderConfig encoder,
                          std::size_t heads, std::size_t layers, QueryMode queries,
                          PartitionConfig partition, InferenceConfig inference);

void validate_model_spec(const ModelSpec& spec);

ParamStore init_model(const ModelSpec& spec, std::uint64_t seed);

void write_model_meta(const ModelSpec& spec, TensorMap& out);
// Throws CheckpointError on a missing key or a format version mismatch.
ModelSpec read_model_meta(const TensorMap& tensors);

// Checks that a scene's catalog fits the class heads.
void check_catalog(const ModelSpec& spec, const ClassCatalog& catalog);

// Scene with its partition and segment-level targets, computed once.
struct PreparedScene {
  Scene scene;
  Partition partition;
  SegmentGroundTruth truth;
  MatchTargets targets;
  std::vector<std::uint8_t> void_segments;  // segment semantic id is -1
};

PreparedScene prepare_scene(Scene scene, const ModelSpec& spec);

struct ForwardPass {
  Tensor segment_features;
  QuerySet queries;
  KernelSet kernels;
  MaskLogits logits;
};

// `points` may be an augmented copy of the partitioned scene.
ForwardPass forward(const Scene& points, const Partition& partition, const ParamStore& params,
                    const ModelSpec& spec, SelectMode mode, std::uint64_t seed);

// Inference on one scene (all queries, no gradients).
Prediction infer_scene(const Scene& scene, const Partition& partition, const ParamStore& params,
                       const ModelSpec& spec);

}  // namespace of3d
