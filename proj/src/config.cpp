#include "of3d/config.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "of3d/text_io.hpp"

namespace of3d {

namespace {

double to_double(const std::string& key, const std::string& v) {
  double out;
  if (!parse_double(v, out) || !std::isfinite(out)) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  long long out;
  if (!parse_int(v, out) || out < 0) {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define OF3D_DOUBLE(name, member)                                                           \
  {                                                                                         \
    name, {                                                                                 \
      [](RunConfig& c, const std::string& k, const std::string& v) {                        \
        c.member = to_double(k, v);                                                         \
      },                                                                                    \
          [](const RunConfig& c) { return format_double(c.member); }                        \
    }                                                                                       \
  }
#define OF3D_COUNT(name, member, type)                                                      \
  {                                                                                         \
    name, {                                                                                 \
      [](RunConfig& c, const std::string& k, const std::string& v) {                        \
        c.member = static_cast<type>(to_count(k, v));                                       \
      },                                                                                    \
          [](const RunConfig& c) { return std::to_string(c.member); }                       \
    }                                                                                       \
  }
#define OF3D_BOOL(name, member)                                                             \
  {                                                                                         \
    name, {                                                                                 \
      [](RunConfig& c, const std::string& k, const std::string& v) {                        \
        c.member = to_bool(k, v);                                                           \
      },                                                                                    \
          [](const RunConfig& c) { return from_bool(c.member); }                            \
    }                                                                                       \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      OF3D_COUNT("seed", train.seed, std::uint64_t),
      OF3D_COUNT("steps", train.steps, std::size_t),
      OF3D_DOUBLE("lr", train.lr),
      OF3D_DOUBLE("weight_decay", train.weight_decay),
      OF3D_DOUBLE("power", train.power),
      OF3D_COUNT("batch_size", train.batch_size, std::size_t),
      OF3D_DOUBLE("lambda_cls", train.weights.lambda),
      OF3D_DOUBLE("beta", train.weights.beta),
      {"matcher",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.train.matcher = matcher_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.train.matcher); }}},
      OF3D_DOUBLE("grad_clip", train.grad_clip),
      OF3D_COUNT("checkpoint_every", train.checkpoint_every, std::size_t),
      OF3D_BOOL("log_timing", train.log_timing),
      OF3D_BOOL("augment_flip", train.augment.flip),
      OF3D_BOOL("augment_rotate", train.augment.z_rotate),
      OF3D_BOOL("augment_scale", train.augment.scale),
      {"pooling",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.partition.mode = pooling_mode_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.partition.mode); }}},
      OF3D_DOUBLE("voxel_size", partition.voxel_size),
      OF3D_COUNT("sp_k", partition.superpoint.k, int),
      OF3D_DOUBLE("sp_angle", partition.superpoint.angle_deg),
      OF3D_DOUBLE("sp_color", partition.superpoint.color_bound),
      OF3D_COUNT("sp_min_size", partition.superpoint.min_size, int),
      OF3D_COUNT("channels", encoder.channels, std::size_t),
      OF3D_COUNT("depth", encoder.depth, std::size_t),
      OF3D_DOUBLE("radius", encoder.radius),
      OF3D_COUNT("heads", heads, std::size_t),
      OF3D_COUNT("layers", layers, std::size_t),
      {"queries",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.queries = query_mode_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.queries); }}},
      OF3D_DOUBLE("mask_threshold", inference.mask_threshold),
      OF3D_DOUBLE("nms_sigma", inference.nms_sigma),
      OF3D_COUNT("nms_top_k", inference.nms_top_k, std::size_t),
  };
  return table;
}

#undef OF3D_DOUBLE
#undef OF3D_COUNT
#undef OF3D_BOOL

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(config, key, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig config;
  LineReader reader(source, text);
  std::set<std::string> seen;
  std::string_view raw;
  while (reader.next(raw)) {
    std::string line(raw.substr(0, raw.find('#')));
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t") - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) reader.fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) reader.fail("duplicate key '" + key + "'");
    try {
      set_run_config_value(config, key, value);
    } catch (const std::invalid_argument& e) {
      reader.fail(e.what());
    }
  }
  return config;
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

ModelSpec model_spec(const RunConfig& config, const ClassCatalog& catalog) {
  ModelSpec spec = make_model_spec(catalog, config.encoder, config.heads, config.layers,
                                   config.queries, config.partition, config.inference);
  validate_model_spec(spec);
  return spec;
}

}  // namespace of3d
