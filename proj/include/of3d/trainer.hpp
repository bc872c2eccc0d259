#pragma once

// Joint training: per-scene forward/backward, matching, AdamW with decoupled
// weight decay and a polynomial learning-rate schedule.
//
// Training log:
//   OF3D-LOG v1
//   <step> <lr> <loss> <cls> <bce> <dice> <sem> <unmatched_gt> <matcher_ns>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "of3d/losses.hpp"
#include "of3d/model.hpp"

namespace of3d {

enum class MatcherKind {
  disentangled,   // linear-time matcher on the constrained matrix
  hungarian,      // exact solver on the constrained matrix
  hungarian_full  // exact solver on the unconstrained matrix
};

std::string to_string(MatcherKind kind);
MatcherKind matcher_from_string(const std::string& text);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double power = 0.9;
  std::size_t steps = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossWeights weights;
  MatcherKind matcher = MatcherKind::disentangled;
  AugmentFlags augment{true, true, true};
  double grad_clip = 0.0;  // global-norm bound; 0 disables
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool log_timing = false;  // false writes 0 for matcher_ns
  std::size_t threads = 1;
};

void validate_train_config(const TrainConfig& config);

double lr_schedule(std::size_t step, std::size_t total, double base_lr, double power = 0.9);

// Adam moments per parameter name.
struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

using Gradients = std::map<std::string, std::vector<double>>;

// Decoupled decay p *= (1 - lr·wd), then the bias-corrected Adam update with
// beta1 0.9, beta2 0.999, eps 1e-8. Returns false, changing nothing, when a
// gradient is non-finite.
bool optimizer_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr,
                    double weight_decay);

// Matching for one scene. `cost` is the unconstrained matrix; `query_segment`
// names each proposal's source segment.
Assignment match(const CostMatrix& cost, std::span<const std::size_t> query_segment,
                 std::span<const int> segment_object, MatcherKind kind);

struct SceneLoss {
  LossParts parts;
  Assignment assignment;
  std::size_t unmatched_gt = 0;
  std::int64_t matcher_ns = 0;
};

// Loss of one (possibly augmented) scene. With `fixed`, that assignment is
// used instead of matching, which makes the loss a smooth function of the
// parameters.
SceneLoss scene_loss(const PreparedScene& prepared, const Scene& points,
                     const ParamStore& params, const ModelSpec& spec,
                     const TrainConfig& config, std::uint64_t selection_seed,
                     const Assignment* fixed = nullptr);

struct StepStats {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0, cls = 0.0, bce = 0.0, dice = 0.0, sem = 0.0;
  std::size_t unmatched_gt = 0;
  std::int64_t matcher_ns = 0;
  bool skipped = false;  // non-finite gradient
};

// Scenes of step `step` are (step·B + j) mod n for j < B. Per-scene gradients
// are reduced in scene order, so results do not depend on config.threads.
StepStats train_step(const std::vector<PreparedScene>& dataset, ParamStore& params,
                     AdamState& state, const ModelSpec& spec, const TrainConfig& config,
                     std::size_t step);

std::string format_log_line(const StepStats& stats, bool log_timing);

// Weights, optimizer state, model metadata and the number of completed
// training steps in one tensor map.
TensorMap make_checkpoint(const ParamStore& params, const AdamState& state, const ModelSpec& spec,
                          std::size_t completed_steps);
// Returns the completed step count.
std::size_t split_checkpoint(const TensorMap& tensors, ParamStore& params, AdamState& state,
                             ModelSpec& spec);

struct FitResult {
  std::vector<StepStats> steps;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
};

// Trains to config.steps, writing `model.ckpt`, `model_step<N>.ckpt` every
// checkpoint_every steps, and `train.log` under `out_dir`. With `resume`,
// continues from that checkpoint's step and appends to the log.
FitResult fit(const std::vector<PreparedScene>& dataset, const ModelSpec& spec,
              const TrainConfig& config, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace of3d
