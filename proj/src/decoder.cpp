#include "of3d/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "of3d/layers.hpp"

namespace of3d {

namespace {

std::string layer_name(std::size_t l) { return "decoder.layer" + std::to_string(l); }

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  return concat_rows(a, b);
}

// Multi-head attention: queries attend over `context` (keys and values).
Tensor attention(const ParamStore& params, const std::string& name, const Tensor& queries,
                 const Tensor& context, std::size_t heads, std::vector<Tensor>* trace) {
  const std::size_t c = queries.cols();
  const std::size_t width = c / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(width));
  const Tensor q = apply_linear(params, name + ".q", queries);
  const Tensor k = apply_linear(params, name + ".k", context);
  const Tensor v = apply_linear(params, name + ".v", context);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * width, e = b + width;
    Tensor scores = scale(matmul_nt(slice_cols(q, b, e), slice_cols(k, b, e)), scale_factor);
    Tensor weights = softmax(scores, 1);
    if (trace) trace->push_back(weights.detach());
    outputs.push_back(matmul(weights, slice_cols(v, b, e)));
  }
  return apply_linear(params, name + ".out", concat_cols(outputs));
}

}  // namespace

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::joint:
      return "joint";
    case QueryMode::instance:
      return "instance";
    case QueryMode::semantic:
      return "semantic";
  }
  return "joint";
}

QueryMode query_mode_from_string(const std::string& text) {
  if (text == "joint") return QueryMode::joint;
  if (text == "instance") return QueryMode::instance;
  if (text == "semantic") return QueryMode::semantic;
  throw std::invalid_argument("unknown query mode '" + text +
                              "' (expected joint, instance or semantic)");
}

void validate_decoder_config(const DecoderConfig& config) {
  if (config.channels < 8) throw std::invalid_argument("decoder channels must be >= 8");
  if (config.heads == 0 || config.channels % config.heads != 0) {
    throw std::invalid_argument("decoder heads (" + std::to_string(config.heads) +
                                ") must divide channels (" +
                                std::to_string(config.channels) + ")");
  }
  if (config.layers == 0) throw std::invalid_argument("decoder layers must be >= 1");
  if (has_semantic_queries(config.queries) && config.semantic_classes == 0) {
    throw std::invalid_argument("semantic queries need at least one class");
  }
}

void init_decoder(ParamStore& params, const DecoderConfig& config, Rng& rng) {
  validate_decoder_config(config);
  const std::size_t c = config.channels;
  if (has_semantic_queries(config.queries)) {
    std::vector<double> q(config.semantic_classes * c);
    for (double& v : q) v = rng.normal();
    params.add("decoder.semantic_queries",
               Tensor::from({config.semantic_classes, c}, std::move(q)));
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string name = layer_name(l);
    for (const char* block : {".self", ".cross"}) {
      add_norm(params, name + block + "_norm", c);
      // Keys carry no bias: it shifts every score of a query row equally and
      // softmax cancels it, so its gradient is identically zero.
      for (const char* proj : {".q", ".k", ".v", ".out"}) {
        add_linear(params, name + block + proj, c, c, rng, proj[1] != 'k');
      }
    }
    add_norm(params, name + ".ff_norm", c);
    add_linear(params, name + ".ff1", c, 2 * c, rng);
    add_linear(params, name + ".ff2", 2 * c, c, rng);
  }
  add_norm(params, "decoder.out_norm", c);
  add_linear(params, "decoder.kernel_head", c, c, rng);
  if (has_instance_queries(config.queries)) {
    add_linear(params, "decoder.class_head", c, config.thing_classes + 1, rng);
  }
}

std::vector<std::size_t> select_query_segments(std::size_t segments, SelectMode mode,
                                               std::uint64_t seed) {
  std::vector<std::size_t> all(segments);
  std::iota(all.begin(), all.end(), 0);
  if (mode == SelectMode::infer || segments == 0) return all;
  const std::size_t keep = std::max<std::size_t>(1, segments / 2);
  // Partial Fisher-Yates with the portable generator.
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(segments - i));
    std::swap(all[i], all[j]);
  }
  all.resize(keep);
  std::sort(all.begin(), all.end());
  return all;
}

QuerySet select_queries(const Tensor& segment_features, SelectMode mode, std::uint64_t seed,
                        const ParamStore& params, const DecoderConfig& config) {
  if (segment_features.rank() != 2 || segment_features.rows() == 0) {
    throw DimensionError("select_queries: need M >= 1 segment features, got " +
                         shape_string(segment_features.shape()));
  }
  QuerySet q;
  if (has_instance_queries(config.queries)) {
    q.source_segment = select_query_segments(segment_features.rows(), mode, seed);
    q.instance = gather_rows(segment_features, q.source_segment);
  }
  if (has_semantic_queries(config.queries)) q.semantic = params.get("decoder.semantic_queries");
  return q;
}

KernelSet decode(const QuerySet& queries, const Tensor& segment_features,
                 const ParamStore& params, const DecoderConfig& config,
                 AttentionTrace* trace) {
  validate_decoder_config(config);
  const std::size_t c = config.channels;
  if (segment_features.rank() != 2 || segment_features.cols() != c) {
    throw DimensionError("decode: segment features " + shape_string(segment_features.shape()) +
                         " for width " + std::to_string(c));
  }
  Tensor x = stack_rows(queries.instance, queries.semantic);
  if (!x.defined()) throw DimensionError("decode: no queries");
  if (x.cols() != c) throw DimensionError("decode: query width " + std::to_string(x.cols()));

  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string name = layer_name(l);
    Tensor n1 = apply_norm(params, name + ".self_norm", x);
    x = add(x, attention(params, name + ".self", n1, n1, config.heads,
                         trace ? &trace->self_attention : nullptr));
    Tensor n2 = apply_norm(params, name + ".cross_norm", x);
    x = add(x, attention(params, name + ".cross", n2, segment_features, config.heads,
                         trace ? &trace->cross_attention : nullptr));
    Tensor n3 = apply_norm(params, name + ".ff_norm", x);
    x = add(x, apply_linear(params, name + ".ff2", silu(apply_linear(params, name + ".ff1", n3))));
  }
  x = apply_norm(params, "decoder.out_norm", x);
  Tensor kernels = apply_linear(params, "decoder.kernel_head", x);

  KernelSet out;
  const std::size_t k_ins = queries.instance_count();
  const std::size_t total = x.rows();
  if (k_ins > 0) {
    std::vector<std::size_t> rows(k_ins);
    std::iota(rows.begin(), rows.end(), 0);
    out.instance_kernels = gather_rows(kernels, rows);
    out.class_logits = apply_linear(params, "decoder.class_head", gather_rows(x, rows));
  }
  if (total > k_ins) {
    std::vector<std::size_t> rows(total - k_ins);
    std::iota(rows.begin(), rows.end(), k_ins);
    out.semantic_kernels = gather_rows(kernels, rows);
  }
  return out;
}

MaskLogits mask_logits(const KernelSet& kernels, const Tensor& segment_features) {
  MaskLogits out;
  if (kernels.instance_kernels.defined()) {
    out.instance = matmul_nt(segment_features, kernels.instance_kernels);
  }
  if (kernels.semantic_kernels.defined()) {
    out.semantic = matmul_nt(segment_features, kernels.semantic_kernels);
  }
  return out;
}

}  // namespace of3d
