#include "of3d/encoder.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "of3d/layers.hpp"
#include "of3d/spatial.hpp"

namespace of3d {

namespace {

std::string block_name(std::size_t b) { return "encoder.block" + std::to_string(b); }

}  // namespace

void validate_encoder_config(const EncoderConfig& config) {
  if (config.channels < 8) {
    throw std::invalid_argument("encoder channels must be >= 8, got " +
                                std::to_string(config.channels));
  }
  if (config.depth < 1) throw std::invalid_argument("encoder depth must be >= 1");
  if (!(config.radius > 0.0)) throw std::invalid_argument("encoder radius must be > 0");
}

void init_encoder(ParamStore& params, const EncoderConfig& config, Rng& rng) {
  validate_encoder_config(config);
  const std::size_t c = config.channels;
  add_linear(params, "encoder.lift", 6, c, rng);
  for (std::size_t b = 0; b < config.depth; ++b) {
    add_linear(params, block_name(b) + ".ff1", c, 2 * c, rng);
    add_linear(params, block_name(b) + ".ff2", 2 * c, c, rng);
    add_norm(params, block_name(b) + ".norm", c);
  }
}

Tensor encoder_inputs(const Scene& scene) {
  const std::size_t n = scene.size();
  if (n == 0) throw DimensionError("encoder_inputs: empty scene");
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const Point& p : scene.points) {
    const double c[3] = {p.x, p.y, p.z};
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], c[d]);
      hi[d] = std::max(hi[d], c[d]);
    }
  }
  double half = 0.0;
  for (int d = 0; d < 3; ++d) half = std::max(half, 0.5 * (hi[d] - lo[d]));
  const double inv = half > 0.0 ? 1.0 / half : 1.0;
  std::vector<double> data;
  data.reserve(n * 6);
  for (const Point& p : scene.points) {
    data.push_back((p.x - 0.5 * (lo[0] + hi[0])) * inv);
    data.push_back((p.y - 0.5 * (lo[1] + hi[1])) * inv);
    data.push_back((p.z - 0.5 * (lo[2] + hi[2])) * inv);
    data.push_back(p.r);
    data.push_back(p.g);
    data.push_back(p.b);
  }
  return Tensor::from({n, 6}, std::move(data));
}

SparseMatrix neighborhood_matrix(const Scene& scene, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("neighborhood radius must be > 0");
  const std::size_t n = scene.size();
  GridIndex grid(scene.points, radius);
  SparseMatrix a;
  a.rows = n;
  a.cols = n;
  a.row_offsets.reserve(n + 1);
  a.row_offsets.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = grid.radius(i, radius);
    // Index order keeps each row's summation independent of distance ties.
    std::sort(nb.begin(), nb.end());
    const double w = 1.0 / static_cast<double>(nb.size());
    for (std::size_t j : nb) {
      a.col_index.push_back(j);
      a.values.push_back(w);
    }
    a.row_offsets.push_back(a.col_index.size());
  }
  return a;
}

Tensor encode(const Tensor& inputs, const SparseMatrix& neighborhoods,
              const EncoderConfig& config, const ParamStore& params) {
  validate_encoder_config(config);
  if (inputs.rank() != 2 || inputs.cols() != 6 || neighborhoods.rows != inputs.rows()) {
    throw DimensionError("encode: inputs " + shape_string(inputs.shape()) + " with " +
                         std::to_string(neighborhoods.rows) + " neighborhoods");
  }
  Tensor h = apply_linear(params, "encoder.lift", inputs);
  for (std::size_t b = 0; b < config.depth; ++b) {
    const std::string name = block_name(b);
    Tensor aggregated = sparse_matmul(neighborhoods, h);
    Tensor hidden = silu(apply_linear(params, name + ".ff1", aggregated));
    h = apply_norm(params, name + ".norm", add(h, apply_linear(params, name + ".ff2", hidden)));
  }
  return h;
}

Tensor encode(const Scene& scene, const EncoderConfig& config, const ParamStore& params) {
  return encode(encoder_inputs(scene), neighborhood_matrix(scene, config.radius), config,
                params);
}

}  // namespace of3d
