#pragma once

// Point-wise feature extractor: lifts (x, y, z, r, g, b) to C channels and
// refines them with blocks of radius-neighborhood averaging followed by a
// residual two-layer feed-forward and layer norm.

#include <cstdint>

#include "of3d/checkpoint.hpp"
#include "of3d/random.hpp"
#include "of3d/scene.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

struct EncoderConfig {
  std::size_t channels = 32;
  std::size_t depth = 3;
  double radius = 0.3;  // meters, in scene coordinates
};

// Throws std::invalid_argument unless channels >= 8, depth >= 1, radius > 0.
void validate_encoder_config(const EncoderConfig& config);

// Registers encoder.* parameters.
void init_encoder(ParamStore& params, const EncoderConfig& config, Rng& rng);

// N×6 input: coordinates mapped by (p - center) / max half-extent of the
// bounding box, then colors.
Tensor encoder_inputs(const Scene& scene);

// Row-normalized adjacency over radius neighborhoods; every row includes
// its own point.
SparseMatrix neighborhood_matrix(const Scene& scene, double radius);

// N×C features.
Tensor encode(const Scene& scene, const EncoderConfig& config, const ParamStore& params);
// Same, with a precomputed neighborhood_matrix.
Tensor encode(const Tensor& inputs, const SparseMatrix& neighborhoods,
              const EncoderConfig& config, const ParamStore& params);

}  // namespace of3d
