#include "of3d/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "of3d/text_io.hpp"

namespace of3d {

std::string to_string(MatcherKind kind) {
  switch (kind) {
    case MatcherKind::disentangled:
      return "disentangled";
    case MatcherKind::hungarian:
      return "hungarian";
    case MatcherKind::hungarian_full:
      return "hungarian-full";
  }
  return "disentangled";
}

MatcherKind matcher_from_string(const std::string& text) {
  if (text == "disentangled") return MatcherKind::disentangled;
  if (text == "hungarian") return MatcherKind::hungarian;
  if (text == "hungarian-full") return MatcherKind::hungarian_full;
  throw std::invalid_argument("unknown matcher '" + text +
                              "' (expected disentangled, hungarian or hungarian-full)");
}

void validate_train_config(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(c.power > 0.0 && c.power <= 1.0)) throw std::invalid_argument("power must be in (0, 1]");
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(c.weights.beta >= 0.0) || !(c.weights.lambda >= 0.0)) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
  if (!(c.grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
  if (c.threads == 0) throw std::invalid_argument("threads must be >= 1");
}

double lr_schedule(std::size_t step, std::size_t total, double base_lr, double power) {
  if (step > total) throw std::invalid_argument("lr_schedule: step beyond total");
  if (total == 0) return base_lr;
  return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

bool optimizer_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr,
                    double weight_decay) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name) || params.get(name).numel() != g.size()) {
      throw DimensionError("optimizer_step: gradient for '" + name + "' does not fit");
    }
    for (double x : g) {
      if (!std::isfinite(x)) return false;
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, tensor] : params.tensors()) {
    auto data = tensor.mutable_data();
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(data.size(), 0.0);
    v.resize(data.size(), 0.0);
    auto it = grads.find(name);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = it == grads.end() ? 0.0 : it->second[i];
      data[i] *= 1.0 - lr * weight_decay;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  return true;
}

Assignment match(const CostMatrix& cost, std::span<const std::size_t> query_segment,
                 std::span<const int> segment_object, MatcherKind kind) {
  switch (kind) {
    case MatcherKind::disentangled:
      return disentangled_match(constrain(cost, query_segment, segment_object));
    case MatcherKind::hungarian: {
      // Objects with no finite entry stay unmatched; the rest are solved exactly.
      const CostMatrix hat = constrain(cost, query_segment, segment_object);
      std::vector<std::size_t> live;
      for (std::size_t k = 0; k < hat.cols; ++k) {
        for (std::size_t i = 0; i < hat.rows; ++i) {
          if (std::isfinite(hat.at(i, k))) {
            live.push_back(k);
            break;
          }
        }
      }
      CostMatrix sub;
      sub.rows = hat.rows;
      sub.cols = live.size();
      sub.lambda = hat.lambda;
      sub.values.resize(sub.rows * sub.cols);
      for (std::size_t i = 0; i < sub.rows; ++i)
        for (std::size_t c = 0; c < live.size(); ++c) sub.at(i, c) = hat.at(i, live[c]);
      Assignment a = hungarian(sub);
      Assignment out;
      out.unmatched_proposals = a.unmatched_proposals;
      for (const auto& [i, c] : a.pairs) out.pairs.emplace_back(i, live[c]);
      std::vector<char> seen(cost.cols, 0);
      for (std::size_t k : live) seen[k] = 1;
      for (std::size_t k = 0; k < cost.cols; ++k) {
        if (!seen[k]) out.unmatched_objects.push_back(k);
      }
      return out;
    }
    case MatcherKind::hungarian_full: {
      if (cost.rows >= cost.cols) return hungarian(cost);
      // More objects than proposals: every proposal gets an object.
      CostMatrix t;
      t.rows = cost.cols;
      t.cols = cost.rows;
      t.values.resize(cost.values.size());
      for (std::size_t i = 0; i < cost.rows; ++i)
        for (std::size_t k = 0; k < cost.cols; ++k) t.at(k, i) = cost.at(i, k);
      const Assignment a = hungarian(t);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& [k, i] : a.pairs) pairs.emplace_back(i, k);
      std::sort(pairs.begin(), pairs.end(),
                [](const auto& x, const auto& y) { return x.second < y.second; });
      Assignment out;
      out.pairs = std::move(pairs);
      out.unmatched_objects = a.unmatched_proposals;
      return out;
    }
  }
  throw std::logic_error("unhandled matcher");
}

SceneLoss scene_loss(const PreparedScene& prepared, const Scene& points, const ParamStore& params,
                     const ModelSpec& spec, const TrainConfig& config,
                     std::uint64_t selection_seed, const Assignment* fixed) {
  const ForwardPass f =
      forward(points, prepared.partition, params, spec, SelectMode::train, selection_seed);
  SceneLoss out;
  LossParts& parts = out.parts;
  parts.cls = Tensor::scalar(0.0);
  parts.bce = Tensor::scalar(0.0);
  parts.dice = Tensor::scalar(0.0);
  parts.sem = Tensor::scalar(0.0);

  if (has_instance_queries(spec.decoder.queries)) {
    if (fixed) {
      out.assignment = *fixed;
    } else {
      CostMatrix cost;
      {
        NoGradGuard no_grad;
        cost = cost_matrix(softmax(f.kernels.class_logits, 1), sigmoid(f.logits.instance),
                           prepared.targets, config.weights.lambda);
      }
      const auto start = std::chrono::steady_clock::now();
      out.assignment = match(cost, f.queries.source_segment, prepared.truth.segment_gt,
                             config.matcher);
      out.matcher_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    }
    out.unmatched_gt = out.assignment.unmatched_objects.size();
    parts.cls = cls_loss(f.kernels.class_logits, out.assignment, prepared.targets.class_column);
    MaskLosses masks = mask_losses(f.logits.instance, out.assignment, prepared.targets.masks);
    parts.bce = masks.bce;
    parts.dice = masks.dice;
  }
  if (has_semantic_queries(spec.decoder.queries)) {
    parts.sem = semantic_loss(f.logits.semantic, prepared.truth.semantic_masks,
                              prepared.void_segments);
  }
  total_loss(parts, config.weights);
  return out;
}

namespace {

struct SceneResult {
  Gradients grads;
  double cls = 0, bce = 0, dice = 0, sem = 0, total = 0;
  std::size_t unmatched_gt = 0;
  std::int64_t matcher_ns = 0;
};

SceneResult run_scene(const PreparedScene& prepared, const ParamStore& params,
                      const ModelSpec& spec, const TrainConfig& config, std::size_t step,
                      std::size_t slot) {
  const std::uint64_t stream = mix_seed(config.seed, step, slot);
  const Scene points = augment(prepared.scene, stream, config.augment);
  ParamStore local = params.clone();
  SceneLoss loss = scene_loss(prepared, points, local, spec, config, mix_seed(stream, 0x5e1));
  loss.parts.total.backward();
  SceneResult r;
  for (const auto& [name, t] : local.tensors()) {
    const auto g = t.grad();
    r.grads[name] = g.empty() ? std::vector<double>(t.numel(), 0.0)
                              : std::vector<double>(g.begin(), g.end());
  }
  r.cls = loss.parts.cls.item();
  r.bce = loss.parts.bce.item();
  r.dice = loss.parts.dice.item();
  r.sem = loss.parts.sem.item();
  r.total = loss.parts.total.item();
  r.unmatched_gt = loss.unmatched_gt;
  r.matcher_ns = loss.matcher_ns;
  return r;
}

}  // namespace

StepStats train_step(const std::vector<PreparedScene>& dataset, ParamStore& params,
                     AdamState& state, const ModelSpec& spec, const TrainConfig& config,
                     std::size_t step) {
  if (dataset.empty()) throw std::invalid_argument("train_step: empty dataset");
  const std::size_t batch = config.batch_size;
  std::vector<SceneResult> results(batch);
  auto work = [&](std::size_t j) {
    results[j] = run_scene(dataset[(step * batch + j) % dataset.size()], params, spec, config,
                           step, j);
  };
  const std::size_t workers = std::min(config.threads, batch);
  if (workers <= 1) {
    for (std::size_t j = 0; j < batch; ++j) work(j);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < batch; j += workers) work(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  StepStats stats;
  stats.step = step;
  stats.lr = lr_schedule(step, config.steps, config.lr, config.power);
  const double inv = 1.0 / static_cast<double>(batch);
  Gradients grads;
  for (const auto& r : results) {
    for (const auto& [name, g] : r.grads) {
      auto& acc = grads[name];
      acc.resize(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    stats.loss += r.total;
    stats.cls += r.cls;
    stats.bce += r.bce;
    stats.dice += r.dice;
    stats.sem += r.sem;
    stats.unmatched_gt += r.unmatched_gt;
    stats.matcher_ns += r.matcher_ns;
  }
  stats.loss *= inv;
  stats.cls *= inv;
  stats.bce *= inv;
  stats.dice *= inv;
  stats.sem *= inv;
  double norm2 = 0.0;
  for (auto& [_, g] : grads) {
    for (double& x : g) {
      x *= inv;
      norm2 += x * x;
    }
  }
  if (config.grad_clip > 0.0 && std::isfinite(norm2) && std::sqrt(norm2) > config.grad_clip) {
    const double f = config.grad_clip / std::sqrt(norm2);
    for (auto& [_, g] : grads)
      for (double& x : g) x *= f;
  }
  stats.skipped = !optimizer_step(params, grads, state, stats.lr, config.weight_decay);
  return stats;
}

std::string format_log_line(const StepStats& s, bool log_timing) {
  return std::to_string(s.step) + " " + format_double(s.lr) + " " + format_double(s.loss) + " " +
         format_double(s.cls) + " " + format_double(s.bce) + " " + format_double(s.dice) + " " +
         format_double(s.sem) + " " + std::to_string(s.unmatched_gt) + " " +
         std::to_string(log_timing ? s.matcher_ns : 0);
}

TensorMap make_checkpoint(const ParamStore& params, const AdamState& state, const ModelSpec& spec,
                          std::size_t completed_steps) {
  TensorMap out;
  for (const auto& [name, t] : params.tensors()) {
    out[name] = t.detach();
    auto shape = t.shape();
    auto m = state.m.find(name);
    auto v = state.v.find(name);
    out["optim.m." + name] = Tensor::from(
        shape, m == state.m.end() ? std::vector<double>(t.numel(), 0.0) : m->second);
    out["optim.v." + name] = Tensor::from(
        shape, v == state.v.end() ? std::vector<double>(t.numel(), 0.0) : v->second);
  }
  out["optim.step"] = Tensor::scalar(static_cast<double>(state.step));
  out["train.step"] = Tensor::scalar(static_cast<double>(completed_steps));
  write_model_meta(spec, out);
  return out;
}

std::size_t split_checkpoint(const TensorMap& tensors, ParamStore& params, AdamState& state,
                             ModelSpec& spec) {
  spec = read_model_meta(tensors);
  params = ParamStore();
  state = AdamState();
  for (const auto& [name, t] : tensors) {
    if (name.rfind("meta.", 0) == 0 || name.rfind("optim.", 0) == 0 ||
        name.rfind("train.", 0) == 0) {
      continue;
    }
    params.add(name, t);
  }
  for (const auto& [name, t] : params.tensors()) {
    auto m = tensors.find("optim.m." + name);
    auto v = tensors.find("optim.v." + name);
    if (m != tensors.end()) state.m[name].assign(m->second.data().begin(), m->second.data().end());
    if (v != tensors.end()) state.v[name].assign(v->second.data().begin(), v->second.data().end());
  }
  if (auto it = tensors.find("optim.step"); it != tensors.end()) {
    state.step = static_cast<std::size_t>(it->second.item());
  }
  // Shapes must match a freshly initialized model.
  const ParamStore reference = init_model(spec, 0);
  if (reference.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(params.size()) +
                          " parameters, the model needs " + std::to_string(reference.size()));
  }
  for (const auto& [name, t] : reference.tensors()) {
    if (!params.contains(name) || params.get(name).shape() != t.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' is missing or misshapen");
    }
  }
  auto it = tensors.find("train.step");
  return it == tensors.end() ? 0 : static_cast<std::size_t>(it->second.item());
}

FitResult fit(const std::vector<PreparedScene>& dataset, const ModelSpec& spec,
              const TrainConfig& config, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume) {
  validate_train_config(config);
  validate_model_spec(spec);
  if (dataset.empty()) throw std::invalid_argument("fit: no scenes");
  std::filesystem::create_directories(out_dir);

  ParamStore params;
  AdamState state;
  ModelSpec active = spec;
  std::size_t first = 0;
  if (resume) {
    first = split_checkpoint(load_checkpoint(*resume), params, state, active);
  } else {
    params = init_model(spec, config.seed);
  }

  FitResult result;
  result.log = out_dir / "train.log";
  result.checkpoint = out_dir / "model.ckpt";
  const bool append = resume && std::filesystem::exists(result.log);
  std::ofstream log(result.log, append ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + result.log.string());
  if (!append) log << "OF3D-LOG v1\n";

  for (std::size_t step = first; step < config.steps; ++step) {
    const StepStats stats = train_step(dataset, params, state, active, config, step);
    log << format_log_line(stats, config.log_timing) << '\n';
    log.flush();
    result.steps.push_back(stats);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("model_step" + std::to_string(step + 1) + ".ckpt"),
                      make_checkpoint(params, state, active, step + 1));
    }
  }
  save_checkpoint(result.checkpoint,
                  make_checkpoint(params, state, active, std::max(first, config.steps)));
  return result;
}

}  // namespace of3d
