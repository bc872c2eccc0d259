#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

#include "of3d/text_io.hpp"

namespace of3d::cli {

std::vector<std::filesystem::path> gen_data(const GenDataOptions& options) {
  std::filesystem::create_directories(options.out);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < options.scenes; ++i) {
    const auto syn = generate_synthetic_scene(mix_seed(options.seed, i), options.params);
    const auto path = options.out / ("scene_" + std::to_string(i) + ".of3d");
    save_scene(syn.scene, path);
    written.push_back(path);
  }
  return written;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides) {
  RunConfig config = file ? parse_run_config(read_file(*file), file->string()) : RunConfig{};
  for (const auto& assignment : overrides) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override '" + assignment + "' is not key=value");
    }
    set_run_config_value(config, assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  return config;
}

std::vector<Scene> load_dataset(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".of3d") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .of3d scenes in " + dir.string());
  std::vector<Scene> scenes;
  for (const auto& f : files) scenes.push_back(load_scene(f));
  return scenes;
}

FitResult train(const TrainOptions& options) {
  RunConfig config = resolve_config(options.config, options.overrides);
  config.train.threads = options.threads;
  const std::vector<Scene> scenes = load_dataset(options.data);
  const ModelSpec spec = model_spec(config, scenes.front().catalog);
  std::vector<PreparedScene> dataset;
  for (const auto& s : scenes) dataset.push_back(prepare_scene(s, spec));
  std::filesystem::create_directories(options.out);
  write_file(options.out / "config.txt", format_run_config(config));
  return fit(dataset, spec, config.train, options.out, options.resume);
}

namespace {

RunConfig config_from_spec(const ModelSpec& spec) {
  RunConfig c;
  c.encoder = spec.encoder;
  c.heads = spec.decoder.heads;
  c.layers = spec.decoder.layers;
  c.queries = spec.decoder.queries;
  c.partition = spec.partition;
  c.inference = spec.inference;
  return c;
}

}  // namespace

Prediction infer(const InferOptions& options) {
  ParamStore params;
  AdamState state;
  ModelSpec spec;
  split_checkpoint(load_checkpoint(options.checkpoint), params, state, spec);
  const Scene scene = load_scene(options.scene);
  const Partition partition = make_partition(scene, spec.partition);
  const Prediction prediction = infer_scene(scene, partition, params, spec);
  if (options.out.has_parent_path()) std::filesystem::create_directories(options.out.parent_path());
  save_prediction(prediction, options.out);
  write_file(options.out.string() + ".config", format_run_config(config_from_spec(spec)));
  return prediction;
}

EvalReport eval(const EvalOptions& options, std::string& report_text) {
  const RunConfig config = resolve_config(options.config, {});
  const Prediction prediction = load_prediction(options.prediction);
  const Scene truth = load_scene(options.truth);
  const Partition partition = make_partition(truth, config.partition);
  EvalReport report = evaluate(prediction, partition, truth);
  report_text = format_report(report);
  if (options.out) write_file(*options.out, report_text);
  return report;
}

BenchReport bench(const BenchOptions& options, std::string& report_text) {
  BenchReport report = bench_matchers(options.sizes, options.trials, options.seed);
  report_text = format_bench_report(report);
  if (options.out) write_file(*options.out, report_text);
  return report;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("OF3D_THREADS");
  if (!v || !*v) return 1;
  long long n;
  if (!parse_int(v, n) || n < 1 || n > 256) {
    throw std::invalid_argument(std::string("OF3D_THREADS must be an integer in [1, 256], got '") +
                                v + "'");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace of3d::cli
