// of3d: data generation, training, inference, evaluation and matcher
// benchmarking for the point-cloud segmentation model.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "of3d/text_io.hpp"

using namespace of3d;

namespace {

std::array<double, 3> parse_room(const std::string& text) {
  std::array<double, 3> room{};
  std::size_t start = 0;
  for (int d = 0; d < 3; ++d) {
    const auto end = text.find(',', start);
    const std::string part = text.substr(start, end == std::string::npos ? end : end - start);
    if (!parse_double(part, room[d]) || !(room[d] > 0.0) || (d < 2 && end == std::string::npos)) {
      throw CLI::ValidationError("--room", "expected three positive numbers X,Y,Z");
    }
    start = end + 1;
    if (d == 2 && end != std::string::npos) {
      throw CLI::ValidationError("--room", "expected three positive numbers X,Y,Z");
    }
  }
  return room;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"of3d: joint instance, semantic and panoptic segmentation of point clouds"};
  app.require_subcommand(1);

  cli::GenDataOptions gen;
  std::string room = "4,4,2.5";
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic room scenes");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--things", gen.params.n_things, "Objects per scene")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--room", room, "Room size X,Y,Z in meters");
  gen_cmd->add_option("--points-per-surface", gen.params.points_per_surface,
                      "Points per room surface and per object")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--noise", gen.params.noise, "Coordinate jitter (meters)")
      ->check(CLI::NonNegativeNumber);

  cli::TrainOptions train;
  std::string train_config, resume;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a scene directory");
  train_cmd->add_option("--data", train.data, "Directory of .of3d scenes")->required();
  train_cmd->add_option("--config", train_config, "Run configuration file");
  train_cmd->add_option("--set", train.overrides, "Override a config key (key=value)");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  cli::InferOptions infer;
  auto* infer_cmd = app.add_subcommand("infer", "Predict one scene");
  infer_cmd->add_option("--ckpt", infer.checkpoint, "Checkpoint")->required();
  infer_cmd->add_option("--scene", infer.scene, "Scene file")->required();
  infer_cmd->add_option("--out", infer.out, "Prediction file")->required();

  cli::EvalOptions eval;
  std::string eval_config, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score a prediction against a labeled scene");
  eval_cmd->add_option("--pred", eval.prediction, "Prediction file")->required();
  eval_cmd->add_option("--gt", eval.truth, "Labeled scene file")->required();
  eval_cmd->add_option("--config", eval_config, "Config with the partition settings used");
  eval_cmd->add_option("--out", eval_out, "Also write the report here");

  cli::BenchOptions bench;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench-matching", "Time both matchers across sizes");
  bench_cmd->add_option("--sizes", bench.sizes, "Matrix sizes, ascending")->delimiter(',');
  bench_cmd->add_option("--trials", bench.trials, "Trials per size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed, "Random seed");
  bench_cmd->add_option("--out", bench_out, "Also write the report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      gen.params.room = parse_room(room);
      for (const auto& p : cli::gen_data(gen)) std::cout << p.string() << '\n';
    } else if (*train_cmd) {
      if (!train_config.empty()) train.config = train_config;
      if (!resume.empty()) train.resume = resume;
      train.threads = cli::threads_from_env();
      const FitResult r = cli::train(train);
      std::cout << "steps " << r.steps.size() << '\n';
      if (!r.steps.empty()) std::cout << "final_loss " << format_double(r.steps.back().loss) << '\n';
      std::cout << "checkpoint " << r.checkpoint.string() << '\n';
      std::cout << "log " << r.log.string() << '\n';
    } else if (*infer_cmd) {
      const Prediction p = cli::infer(infer);
      std::cout << "instances " << (p.instances ? p.instances->size() : 0) << '\n';
      std::cout << "prediction " << infer.out.string() << '\n';
    } else if (*eval_cmd) {
      if (!eval_config.empty()) eval.config = eval_config;
      if (!eval_out.empty()) eval.out = eval_out;
      std::string text;
      cli::eval(eval, text);
      std::cout << text;
    } else if (*bench_cmd) {
      if (!bench_out.empty()) bench.out = bench_out;
      std::string text;
      cli::bench(bench, text);
      std::cout << text;
    }
  } catch (const std::exception& e) {
    std::cerr << "of3d: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
