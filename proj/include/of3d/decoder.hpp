#pragma once

// Transformer decoder over segment features. Instance queries start as rows
// of the pooled features; semantic queries are learned, one per catalog
// class in catalog order. Each layer is pre-norm self-attention over all
// queries, cross-attention into the segment features, and a feed-forward.

#include <cstdint>
#include <string>
#include <vector>

#include "of3d/checkpoint.hpp"
#include "of3d/random.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

// Which query families the model carries.
enum class QueryMode { joint, instance, semantic };

std::string to_string(QueryMode mode);
QueryMode query_mode_from_string(const std::string& text);

inline bool has_instance_queries(QueryMode m) { return m != QueryMode::semantic; }
inline bool has_semantic_queries(QueryMode m) { return m != QueryMode::instance; }

enum class SelectMode { train, infer };

struct DecoderConfig {
  std::size_t channels = 32;
  std::size_t heads = 4;
  std::size_t layers = 6;
  std::size_t semantic_classes = 0;  // catalog size
  std::size_t thing_classes = 0;     // class head width is thing_classes + 1
  QueryMode queries = QueryMode::joint;
};

void validate_decoder_config(const DecoderConfig& config);

// Registers decoder.* parameters.
void init_decoder(ParamStore& params, const DecoderConfig& config, Rng& rng);

struct QuerySet {
  Tensor instance;                           // K_ins×C, undefined when K_ins = 0
  std::vector<std::size_t> source_segment;   // ascending, distinct
  Tensor semantic;                           // K_sem×C, undefined when absent

  std::size_t instance_count() const { return source_segment.size(); }
  std::size_t semantic_count() const { return semantic.defined() ? semantic.rows() : 0; }
};

// Segments that seed instance queries: all M at inference; in training a
// uniform subset of max(1, floor(M/2)), returned ascending.
std::vector<std::size_t> select_query_segments(std::size_t segments, SelectMode mode,
                                               std::uint64_t seed);

QuerySet select_queries(const Tensor& segment_features, SelectMode mode, std::uint64_t seed,
                        const ParamStore& params, const DecoderConfig& config);

struct KernelSet {
  Tensor instance_kernels;  // K_ins×C
  Tensor semantic_kernels;  // K_sem×C
  Tensor class_logits;      // K_ins×(thing_classes + 1); last column is no-object
};

// Per-layer attention weights, for inspection.
struct AttentionTrace {
  std::vector<Tensor> self_attention;   // per layer and head: K×K
  std::vector<Tensor> cross_attention;  // per layer and head: K×M
};

KernelSet decode(const QuerySet& queries, const Tensor& segment_features,
                 const ParamStore& params, const DecoderConfig& config,
                 AttentionTrace* trace = nullptr);

struct MaskLogits {
  Tensor instance;  // M×K_ins
  Tensor semantic;  // M×K_sem
};

// Column i is S·kernel_iᵀ.
MaskLogits mask_logits(const KernelSet& kernels, const Tensor& segment_features);

}  // namespace of3d
