#pragma once

// Run configuration as `key = value` lines. Blank lines and `#` comments are
// allowed; unknown or repeated keys are errors. format_run_config writes
// every key, so its output fully describes a run.

#include <string>
#include <vector>

#include "of3d/model.hpp"
#include "of3d/trainer.hpp"

namespace of3d {

struct RunConfig {
  TrainConfig train;
  EncoderConfig encoder;
  std::size_t heads = 4;
  std::size_t layers = 6;
  QueryMode queries = QueryMode::joint;
  PartitionConfig partition;
  InferenceConfig inference;
};

// Every accepted key, in output order.
const std::vector<std::string>& run_config_keys();

// Applies one `key=value` assignment; throws std::invalid_argument naming the key.
void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
std::string format_run_config(const RunConfig& config);

ModelSpec model_spec(const RunConfig& config, const ClassCatalog& catalog);

}  // namespace of3d
