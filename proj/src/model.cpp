#include "of3d/model.hpp"

#include <cmath>
#include <stdexcept>

namespace of3d {

ModelSpec make_model_spec(const ClassCatalog& catalog, EncoderConfig encoder, std::size_t heads,
                          std::size_t layers, QueryMode queries, PartitionConfig partition,
                          InferenceConfig inference) {
  ModelSpec spec;
  spec.encoder = encoder;
  spec.decoder.channels = encoder.channels;
  spec.decoder.heads = heads;
  spec.decoder.layers = layers;
  spec.decoder.queries = queries;
  spec.decoder.semantic_classes = catalog.size();
  spec.decoder.thing_classes = catalog.thing_ids().size();
  spec.partition = partition;
  spec.inference = inference;
  return spec;
}

void validate_model_spec(const ModelSpec& spec) {
  validate_encoder_config(spec.encoder);
  validate_decoder_config(spec.decoder);
  if (spec.decoder.channels != spec.encoder.channels) {
    throw std::invalid_argument("decoder width must equal encoder width");
  }
  if (has_instance_queries(spec.decoder.queries) && spec.decoder.thing_classes == 0) {
    throw std::invalid_argument("instance queries need at least one thing class");
  }
}

ParamStore init_model(const ModelSpec& spec, std::uint64_t seed) {
  validate_model_spec(spec);
  ParamStore params;
  Rng rng(mix_seed(seed, 0x1417));
  init_encoder(params, spec.encoder, rng);
  init_decoder(params, spec.decoder, rng);
  return params;
}

namespace {

void put(TensorMap& out, const std::string& key, double value) {
  out["meta." + key] = Tensor::scalar(value);
}

double get(const TensorMap& in, const std::string& key) {
  auto it = in.find("meta." + key);
  if (it == in.end()) throw CheckpointError("checkpoint lacks meta." + key);
  if (it->second.numel() != 1) throw CheckpointError("meta." + key + " is not a scalar");
  return it->second.data()[0];
}

std::size_t get_count(const TensorMap& in, const std::string& key) {
  const double v = get(in, key);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) {
    throw CheckpointError("meta." + key + " is not a count");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void write_model_meta(const ModelSpec& spec, TensorMap& out) {
  put(out, "version", kModelFormatVersion);
  put(out, "channels", static_cast<double>(spec.encoder.channels));
  put(out, "depth", static_cast<double>(spec.encoder.depth));
  put(out, "radius", spec.encoder.radius);
  put(out, "heads", static_cast<double>(spec.decoder.heads));
  put(out, "layers", static_cast<double>(spec.decoder.layers));
  put(out, "semantic_classes", static_cast<double>(spec.decoder.semantic_classes));
  put(out, "thing_classes", static_cast<double>(spec.decoder.thing_classes));
  put(out, "queries", static_cast<double>(spec.decoder.queries));
  put(out, "pooling", static_cast<double>(spec.partition.mode));
  put(out, "voxel_size", spec.partition.voxel_size);
  put(out, "sp_k", spec.partition.superpoint.k);
  put(out, "sp_angle", spec.partition.superpoint.angle_deg);
  put(out, "sp_color", spec.partition.superpoint.color_bound);
  put(out, "sp_min_size", static_cast<double>(spec.partition.superpoint.min_size));
  put(out, "mask_threshold", spec.inference.mask_threshold);
  put(out, "nms_sigma", spec.inference.nms_sigma);
  put(out, "nms_top_k", static_cast<double>(spec.inference.nms_top_k));
}

ModelSpec read_model_meta(const TensorMap& in) {
  const double version = get(in, "version");
  if (version != kModelFormatVersion) {
    throw CheckpointError("checkpoint model format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kModelFormatVersion));
  }
  ModelSpec s;
  s.encoder.channels = get_count(in, "channels");
  s.encoder.depth = get_count(in, "depth");
  s.encoder.radius = get(in, "radius");
  s.decoder.channels = s.encoder.channels;
  s.decoder.heads = get_count(in, "heads");
  s.decoder.layers = get_count(in, "layers");
  s.decoder.semantic_classes = get_count(in, "semantic_classes");
  s.decoder.thing_classes = get_count(in, "thing_classes");
  const std::size_t queries = get_count(in, "queries");
  if (queries > 2) throw CheckpointError("meta.queries out of range");
  s.decoder.queries = static_cast<QueryMode>(queries);
  const std::size_t pooling = get_count(in, "pooling");
  if (pooling > 1) throw CheckpointError("meta.pooling out of range");
  s.partition.mode = static_cast<PoolingMode>(pooling);
  s.partition.voxel_size = get(in, "voxel_size");
  s.partition.superpoint.k = static_cast<int>(get_count(in, "sp_k"));
  s.partition.superpoint.angle_deg = get(in, "sp_angle");
  s.partition.superpoint.color_bound = get(in, "sp_color");
  s.partition.superpoint.min_size = static_cast<int>(get_count(in, "sp_min_size"));
  s.inference.mask_threshold = get(in, "mask_threshold");
  s.inference.nms_sigma = get(in, "nms_sigma");
  s.inference.nms_top_k = get_count(in, "nms_top_k");
  try {
    validate_model_spec(s);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  return s;
}

void check_catalog(const ModelSpec& spec, const ClassCatalog& catalog) {
  if (catalog.size() != spec.decoder.semantic_classes ||
      catalog.thing_ids().size() != spec.decoder.thing_classes) {
    throw std::invalid_argument(
        "scene catalog has " + std::to_string(catalog.size()) + " classes (" +
        std::to_string(catalog.thing_ids().size()) + " thing), model expects " +
        std::to_string(spec.decoder.semantic_classes) + " (" +
        std::to_string(spec.decoder.thing_classes) + " thing)");
  }
}

PreparedScene prepare_scene(Scene scene, const ModelSpec& spec) {
  validate_scene(scene);
  check_catalog(spec, scene.catalog);
  PreparedScene p;
  p.partition = make_partition(scene, spec.partition);
  p.truth = project_ground_truth(scene, p.partition);
  p.targets.masks = p.truth.instance_masks;
  for (int cls : p.truth.instance_class) {
    p.targets.class_column.push_back(scene.catalog.thing_index(cls));
  }
  p.void_segments.resize(p.partition.segments);
  for (std::size_t s = 0; s < p.partition.segments; ++s) {
    p.void_segments[s] = p.truth.segment_semantic[s] < 0;
  }
  p.scene = std::move(scene);
  return p;
}

ForwardPass forward(const Scene& points, const Partition& partition, const ParamStore& params,
                    const ModelSpec& spec, SelectMode mode, std::uint64_t seed) {
  if (points.size() != partition.points()) {
    throw DimensionError("forward: scene has " + std::to_string(points.size()) +
                         " points, partition covers " + std::to_string(partition.points()));
  }
  ForwardPass f;
  const Tensor features = encode(points, spec.encoder, params);
  f.segment_features = pool(features, partition);
  f.queries = select_queries(f.segment_features, mode, seed, params, spec.decoder);
  f.kernels = decode(f.queries, f.segment_features, params, spec.decoder);
  f.logits = mask_logits(f.kernels, f.segment_features);
  return f;
}

Prediction infer_scene(const Scene& scene, const Partition& partition, const ParamStore& params,
                       const ModelSpec& spec) {
  check_catalog(spec, scene.catalog);
  NoGradGuard no_grad;
  const ForwardPass f = forward(scene, partition, params, spec, SelectMode::infer, 0);
  return predict(f.logits, f.kernels.class_logits, scene.catalog, spec.inference);
}

}  // namespace of3d
