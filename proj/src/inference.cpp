#include "of3d/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "of3d/text_io.hpp"

namespace of3d {

std::vector<InstanceProposal> decode_instances(const Tensor& instance_logits,
                                               const Tensor& class_logits,
                                               const ClassCatalog& catalog, double threshold) {
  const std::size_t m = instance_logits.rows();
  const std::size_t k_ins = instance_logits.cols();
  const std::size_t things = catalog.thing_ids().size();
  if (class_logits.rows() != k_ins || class_logits.cols() != things + 1) {
    throw DimensionError("decode_instances: class logits " + shape_string(class_logits.shape()) +
                         " for " + std::to_string(k_ins) + " queries and " +
                         std::to_string(things) + " thing classes");
  }
  NoGradGuard no_grad;
  const Tensor probs = sigmoid(instance_logits);
  const Tensor class_probs = softmax(class_logits, 1);
  const auto mp = probs.data();
  const auto cp = class_probs.data();
  std::vector<InstanceProposal> out;
  for (std::size_t i = 0; i < k_ins; ++i) {
    const double* row = &cp[i * (things + 1)];
    const std::size_t full_argmax =
        static_cast<std::size_t>(std::max_element(row, row + things + 1) - row);
    if (full_argmax == things || things == 0) continue;
    InstanceProposal p;
    p.query = i;
    p.class_id = catalog.thing_ids()[full_argmax];
    p.class_score = row[full_argmax];
    p.mask.assign(m, 0);
    double inside = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < m; ++s) {
      const double v = mp[s * k_ins + i];
      if (v > threshold) {
        p.mask[s] = 1;
        inside += v;
        ++count;
      }
    }
    if (count == 0) continue;
    p.mask_score = inside / static_cast<double>(count);
    p.score = p.class_score * p.mask_score;
    out.push_back(std::move(p));
  }
  return out;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw DimensionError("mask_iou: length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    inter += (a[s] && b[s]);
    uni += (a[s] || b[s]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<InstanceProposal> matrix_nms(std::vector<InstanceProposal> proposals, double sigma,
                                         std::size_t top_k) {
  if (!(sigma > 0.0)) throw std::invalid_argument("matrix_nms: sigma must be > 0");
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  const std::size_t n = proposals.size();
  // iou[i][j] for i ranked above j within the same class, else 0.
  std::vector<double> iou(n * n, 0.0);
  std::vector<double> max_iou(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (proposals[i].class_id != proposals[j].class_id) continue;
      iou[i * n + j] = mask_iou(proposals[i].mask, proposals[j].mask);
      max_iou[j] = std::max(max_iou[j], iou[i * n + j]);
    }
  }
  std::vector<double> decayed(n);
  for (std::size_t j = 0; j < n; ++j) {
    double decay = 1.0;
    for (std::size_t i = 0; i < j; ++i) {
      if (proposals[i].class_id != proposals[j].class_id) continue;
      const double x = iou[i * n + j];
      decay = std::min(decay, std::exp(-(x * x - max_iou[i] * max_iou[i]) / sigma));
    }
    decayed[j] = proposals[j].score * decay;
  }
  for (std::size_t j = 0; j < n; ++j) proposals[j].score = decayed[j];
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  if (proposals.size() > top_k) proposals.resize(top_k);
  return proposals;
}

std::vector<int> decode_semantic(const Tensor& semantic_logits) {
  const std::size_t m = semantic_logits.rows(), k = semantic_logits.cols();
  if (k == 0) throw DimensionError("decode_semantic: no classes");
  const auto v = semantic_logits.data();
  std::vector<int> out(m);
  for (std::size_t s = 0; s < m; ++s) {
    const double* row = &v[s * k];
    out[s] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

std::vector<PanopticLabel> fuse_panoptic(const std::vector<int>& semantic,
                                         const std::vector<PredictedInstance>& instances) {
  std::vector<PanopticLabel> out(semantic.size());
  for (std::size_t s = 0; s < semantic.size(); ++s) out[s].semantic = semantic[s];
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  // Ascending score; among equal scores the first-listed instance goes last.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (instances[a].score != instances[b].score) return instances[a].score < instances[b].score;
    return a > b;
  });
  for (std::size_t idx : order) {
    const auto& inst = instances[idx];
    if (inst.mask.size() != semantic.size()) {
      throw DimensionError("fuse_panoptic: instance " + std::to_string(idx) + " mask has " +
                           std::to_string(inst.mask.size()) + " entries for " +
                           std::to_string(semantic.size()) + " segments");
    }
    for (std::size_t s = 0; s < semantic.size(); ++s) {
      if (inst.mask[s]) out[s] = {inst.class_id, static_cast<int>(idx)};
    }
  }
  return out;
}

std::vector<ScoredBox> boxes_from_instances(const std::vector<PredictedInstance>& instances,
                                            const Partition& partition, const Scene& scene) {
  if (partition.points() != scene.size()) throw DimensionError("boxes_from_instances: sizes");
  std::vector<ScoredBox> out;
  for (const auto& inst : instances) {
    if (inst.mask.size() != partition.segments) {
      throw DimensionError("boxes_from_instances: mask length");
    }
    ScoredBox b;
    b.class_id = inst.class_id;
    b.score = inst.score;
    bool any = false;
    for (std::size_t i = 0; i < scene.size(); ++i) {
      if (!inst.mask[partition.segment_of[i]]) continue;
      const Point& p = scene.points[i];
      const double c[3] = {p.x, p.y, p.z};
      for (int d = 0; d < 3; ++d) {
        b.box.min[d] = any ? std::min(b.box.min[d], c[d]) : c[d];
        b.box.max[d] = any ? std::max(b.box.max[d], c[d]) : c[d];
      }
      any = true;
    }
    if (!any) throw std::invalid_argument("boxes_from_instances: empty instance mask");
    out.push_back(b);
  }
  return out;
}

Prediction predict(const MaskLogits& logits, const Tensor& class_logits,
                   const ClassCatalog& catalog, const InferenceConfig& config) {
  NoGradGuard no_grad;
  Prediction out;
  if (logits.instance.defined()) {
    auto proposals = matrix_nms(
        decode_instances(logits.instance, class_logits, catalog, config.mask_threshold),
        config.nms_sigma, config.nms_top_k);
    std::vector<PredictedInstance> instances;
    for (auto& p : proposals) instances.push_back({p.class_id, p.score, std::move(p.mask)});
    out.instances = std::move(instances);
  }
  if (logits.semantic.defined()) {
    if (logits.semantic.cols() != catalog.size()) {
      throw DimensionError("predict: " + std::to_string(logits.semantic.cols()) +
                           " semantic kernels for " + std::to_string(catalog.size()) +
                           " classes");
    }
    out.semantic = decode_semantic(logits.semantic);
  }
  if (out.semantic && out.instances) out.panoptic = fuse_panoptic(*out.semantic, *out.instances);
  return out;
}

// ---- file format ------------------------------------------------------------

namespace {

constexpr const char* kMagic = "OF3D-PRED v1";

template <typename T>
void append_row(std::string& out, const std::vector<T>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(static_cast<long long>(values[i]));
  }
  out += '\n';
}

std::vector<int> parse_ints(LineReader& reader, std::string_view line, long long lo) {
  std::vector<int> out;
  for (auto tok : split_ws(line)) {
    long long v;
    if (!parse_int(tok, v) || v < lo || v > 1'000'000'000) {
      reader.fail("bad integer '" + std::string(tok) + "'");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

std::string format_prediction(const Prediction& p) {
  std::string out = std::string(kMagic) + "\n";
  if (p.semantic) {
    out += "semantic\n";
    append_row(out, *p.semantic);
  }
  if (p.instances) {
    out += "instances " + std::to_string(p.instances->size()) + "\n";
    for (const auto& inst : *p.instances) {
      out += std::to_string(inst.class_id) + " " + format_double(inst.score) + "\n";
      append_row(out, inst.mask);
    }
  }
  if (p.panoptic) {
    out += "panoptic\n";
    for (std::size_t s = 0; s < p.panoptic->size(); ++s) {
      if (s) out += ' ';
      out += std::to_string((*p.panoptic)[s].semantic) + "," +
             std::to_string((*p.panoptic)[s].instance);
    }
    out += '\n';
  }
  return out;
}

Prediction parse_prediction(const std::string& text, const std::string& source) {
  LineReader reader(source, text);
  if (reader.expect("header") != kMagic) {
    reader.fail("expected '" + std::string(kMagic) + "' header");
  }
  Prediction p;
  std::optional<std::size_t> segments;
  auto check_length = [&](std::size_t n) {
    if (!segments) segments = n;
    if (*segments != n) {
      reader.fail("expected " + std::to_string(*segments) + " segment values, got " +
                  std::to_string(n));
    }
  };
  std::string_view line;
  int stage = 0;  // sections must appear in order: semantic, instances, panoptic
  while (reader.next(line)) {
    const auto head = split_ws(line);
    if (head.empty()) reader.fail("unexpected blank line");
    if (head[0] == "semantic" && head.size() == 1 && stage < 1) {
      stage = 1;
      p.semantic = parse_ints(reader, reader.expect("semantic ids"), 0);
      check_length(p.semantic->size());
    } else if (head[0] == "instances" && head.size() == 2 && stage < 2) {
      stage = 2;
      long long n;
      if (!parse_int(head[1], n) || n < 0) reader.fail("bad instance count");
      p.instances.emplace();
      for (long long k = 0; k < n; ++k) {
        const auto fields = split_ws(reader.expect("instance class and score"));
        long long cls;
        double score;
        if (fields.size() != 2 || !parse_int(fields[0], cls) || cls < 0 ||
            !parse_double(fields[1], score) || !std::isfinite(score)) {
          reader.fail("expected '<class> <score>'");
        }
        PredictedInstance inst;
        inst.class_id = static_cast<int>(cls);
        inst.score = score;
        for (int v : parse_ints(reader, reader.expect("instance mask"), 0)) {
          if (v > 1) reader.fail("mask values must be 0 or 1");
          inst.mask.push_back(static_cast<std::uint8_t>(v));
        }
        check_length(inst.mask.size());
        p.instances->push_back(std::move(inst));
      }
    } else if (head[0] == "panoptic" && head.size() == 1 && stage < 3) {
      stage = 3;
      p.panoptic.emplace();
      for (auto tok : split_ws(reader.expect("panoptic labels"))) {
        const auto comma = tok.find(',');
        long long s, i;
        if (comma == std::string_view::npos || !parse_int(tok.substr(0, comma), s) ||
            !parse_int(tok.substr(comma + 1), i) || s < -1 || i < -1) {
          reader.fail("bad panoptic label '" + std::string(tok) + "'");
        }
        p.panoptic->push_back({static_cast<int>(s), static_cast<int>(i)});
      }
      check_length(p.panoptic->size());
    } else {
      reader.fail("unexpected line '" + std::string(line) + "'");
    }
  }
  return p;
}

void save_prediction(const Prediction& prediction, const std::filesystem::path& path) {
  write_file(path, format_prediction(prediction));
}

Prediction load_prediction(const std::filesystem::path& path) {
  return parse_prediction(read_file(path), path.string());
}

}  // namespace of3d
