#pragma once

// Subcommand bodies behind the `of3d` executable. Each returns normally on
// success and throws on any failure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "of3d/config.hpp"
#include "of3d/metrics.hpp"

namespace of3d::cli {

struct GenDataOptions {
  std::filesystem::path out;
  std::size_t scenes = 1;
  std::uint64_t seed = 0;
  SyntheticParams params;
};

// Writes scene_<i>.of3d for i < scenes; scene i uses seed mix_seed(seed, i).
std::vector<std::filesystem::path> gen_data(const GenDataOptions& options);

struct TrainOptions {
  std::filesystem::path data;
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // key=value, applied after the file
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::size_t threads = 1;
};

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides);

// Scenes are the directory's *.of3d files in name order.
std::vector<Scene> load_dataset(const std::filesystem::path& dir);

// Writes config.txt, train.log and model*.ckpt under `out`.
FitResult train(const TrainOptions& options);

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path scene;
  std::filesystem::path out;
};

// Writes the prediction file and, next to it, `<out>.config` with the
// settings read from the checkpoint.
Prediction infer(const InferOptions& options);

struct EvalOptions {
  std::filesystem::path prediction;
  std::filesystem::path truth;
  std::optional<std::filesystem::path> config;  // partition settings
  std::optional<std::filesystem::path> out;
};

EvalReport eval(const EvalOptions& options, std::string& report_text);

struct BenchOptions {
  std::vector<std::size_t> sizes{64, 128, 256, 512, 1024};
  std::size_t trials = 3;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out;
};

BenchReport bench(const BenchOptions& options, std::string& report_text);

// OF3D_THREADS, default 1.
std::size_t threads_from_env();

}  // namespace of3d::cli
